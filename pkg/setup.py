"""Build script: compiles the optional accelerator extension.

The package is fully functional without the extension (a NumPy fallback is
selected at import time), so a failed compile only costs speed.  Set
HECA_NO_EXTENSION=1 to skip the build entirely.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Degrade to the pure-Python package if the C toolchain is missing."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001 - any build failure is non-fatal
            print(f"warning: skipping compiled kernels ({exc}); "
                  "falling back to the NumPy implementation")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: could not build {ext.name} ({exc}); "
                  "falling back to the NumPy implementation")


ext_modules = []
if os.environ.get("HECA_NO_EXTENSION") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [Extension("heca.kernels._compiled",
                       ["src/heca/kernels/_compiled.pyx"])],
            language_level=3,
        )
    except ImportError:
        pass

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
