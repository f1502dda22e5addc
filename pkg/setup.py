"""Build hook for the optional compiled kernels.

A failed compile is downgraded to a warning: ``sold`` then runs on the
pure-Python fallback selected at import time.
"""

import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            warnings.warn(f"compiled kernels not built ({exc}); using pure-Python fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            warnings.warn(f"could not build {ext.name} ({exc}); using pure-Python fallback")


try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("sold._fold_ext", ["src/sold/_fold_ext.pyx"], extra_compile_args=["-O3"])],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
