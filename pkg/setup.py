"""Build script for the optional compiled rollout kernel.

The package works without the extension: funnelcodesign.rollout falls back
to a pure-Python kernel at import time if the compiled module is missing.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "funnelcodesign._rollout_cy",
                ["src/funnelcodesign/_rollout_cy.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
