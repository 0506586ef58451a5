"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a pure-Python kernel backend is
selected at import time), so the extension is marked optional and any build
failure degrades to the fallback instead of aborting the install.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "gentune._kernels",
                ["src/gentune/_kernels.pyx"],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
