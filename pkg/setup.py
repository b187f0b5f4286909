import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

openmp = [] if os.environ.get("ENTMONGE_NO_OPENMP") else ["-fopenmp"]

extensions = [
    Extension(
        "entmonge._kernels",
        ["src/entmonge/_kernels.pyx"],
        include_dirs=[np.get_include()],
        # no -ffast-math: the kernels rely on IEEE infinities; errno is never read
        extra_compile_args=["-O3", "-fno-math-errno", *openmp],
        extra_link_args=openmp,
    )
]


class OptionalBuildExt(build_ext):
    """Leave the pure-Python fallback in place if the compiler is missing."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - depends on toolchain
            print(f"warning: compiled kernels not built ({exc}); using NumPy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover
            print(f"warning: failed to build {ext.name} ({exc}); using NumPy fallback")


setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}),
    cmdclass={"build_ext": OptionalBuildExt},
)
