# Sphinx configuration for the pdacascade documentation.
# https://www.sphinx-doc.org/en/master/usage/configuration.html

import os
import sys

sys.path.insert(0, os.path.abspath("../.."))

project = 'pdacascade'
copyright = '2026, pdacascade developers'
author = 'pdacascade developers'
release = '0.1.0'

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.viewcode",
]

# The API pages build without the training stack installed.
autodoc_mock_imports = ["torch", "monai", "nibabel", "scipy", "sklearn", "matplotlib", "pandas", "yaml"]
autodoc_member_order = "bysource"

templates_path = ['_templates']
exclude_patterns = []

html_theme = 'sphinx_rtd_theme'
html_static_path = []
