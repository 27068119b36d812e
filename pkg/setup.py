"""Build the optional compiled kernel extension.

Project metadata lives in pyproject.toml; if the extension fails to compile
the package still installs and falls back to the numpy kernels.
"""
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "fractalbem._ckernels",
        ["src/fractalbem/_ckernels.pyx"],
        extra_compile_args=["-O3"],
        optional=True,
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
