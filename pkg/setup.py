"""Build script for the optional compiled kernels.

The package works without the extension: ``epimeld._core`` falls back to the
pure-numpy implementation when ``epimeld._core._speedups`` is missing, so a
failed compile degrades the install instead of breaking it.
"""

import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Swallow compiler failures so the pure-Python install still succeeds."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001 - any build failure is non-fatal
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        import warnings

        warnings.warn(
            "building the epimeld._core._speedups extension failed; "
            f"falling back to the pure-Python kernels ({exc})",
            stacklevel=1,
        )


extensions = [
    Extension(
        "epimeld._core._speedups",
        ["src/epimeld/_core/_speedups.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
]

setup(
    ext_modules=cythonize(extensions, language_level=3),
    cmdclass={"build_ext": optional_build_ext},
)
