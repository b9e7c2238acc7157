"""Build glue for the optional compiled silhouette core.

The extension is a pure speedup; if Cython or a C compiler is missing the
install falls back to the numpy implementation in sil_loss.py.
"""

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Skip (rather than fail) when the extension cannot be compiled."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # missing compiler, headers, ...
            print(f"skipping optional extension build: {exc}")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"skipping optional extension {ext.name}: {exc}")


ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "softsil._silcore",
                ["src/softsil/_silcore.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ]
    )
except ImportError as exc:
    print(f"building without the compiled silhouette core: {exc}")

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
