"""Build the optional compiled kernels.

If Cython or a C compiler is unavailable the package still installs and
falls back to ``intention_tuning._kernels_py`` at import time.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("intention_tuning._kernels", ["src/intention_tuning/_kernels.pyx"],
                   extra_compile_args=["-O3"], optional=True)],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
