# Licensed under the Apache License, Version 2.0 (the "License"); you may
# not use this file except in compliance with the License. You may obtain
# a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
# WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
# License for the specific language governing permissions and limitations
# under the License.

"""pytest collection wiring for testscenarios.

stestr applies scenarios through the ``load_tests`` protocol, which pytest
ignores. Expand each scenario into its own TestCase subclass so pytest runs
the same tests stestr does.
"""

import inspect
import re

from _pytest import unittest as pytest_unittest
import testscenarios


def pytest_pycollect_makeitem(collector, name, obj):
    if not (inspect.isclass(obj) and
            issubclass(obj, testscenarios.WithScenarios) and
            getattr(obj, 'scenarios', None)):
        return None
    collected = []
    for scenario_name, params in obj.scenarios:
        sub_name = '%s_%s' % (name, re.sub(r'\W+', '_', scenario_name))
        attrs = dict(params, scenarios=None)
        sub = type(sub_name, (obj,), attrs)
        sub.__module__ = obj.__module__
        setattr(collector.obj, sub_name, sub)
        collected.append(pytest_unittest.UnitTestCase.from_parent(
            collector, name=sub_name))
    return collected
