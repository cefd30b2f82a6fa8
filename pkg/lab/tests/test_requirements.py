import re
from importlib import metadata
from pathlib import Path

from django.conf import settings
from django.test import SimpleTestCase

DIRECT = ('Django', 'djangorestframework', 'drf-yasg', 'django-filter', 'python-decouple', 'numpy', 'scipy',
          'hypothesis', 'Arpeggio', 'sympy')


def _normalize(name):
    return re.sub(r'[-_.]+', '-', name).lower()


def _requirement_name(line):
    return _normalize(re.split(r'[\s<>=!~\[;(]', line.strip(), maxsplit=1)[0])


def _dependencies(name):
    try:
        requires = metadata.requires(name) or []
    except metadata.PackageNotFoundError:
        return []
    # optional extras are never installed by the pins; platform markers are kept
    return [_requirement_name(req) for req in requires if 'extra ==' not in req.replace('"', "'")]


class RequirementsTests(SimpleTestCase):
    def pins(self):
        lines = (Path(settings.BASE_DIR) / 'requirements.txt').read_text(encoding='utf-8').splitlines()
        return {_requirement_name(line) for line in lines if line.strip() and not line.startswith('#')}

    def test_every_pin_is_used(self):
        reachable, todo = set(), [_normalize(name) for name in DIRECT]
        while todo:
            name = todo.pop()
            if name not in reachable:
                reachable.add(name)
                todo.extend(_dependencies(name))
        self.assertEqual(self.pins() - reachable, set())

    def test_direct_dependencies_are_pinned(self):
        self.assertLessEqual({_normalize(name) for name in DIRECT}, self.pins())
