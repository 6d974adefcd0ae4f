# -*- coding: utf-8 -*-
import os

# -- General configuration ------------------------------------------------

needs_sphinx = '1.4'

extensions = ['sphinx.ext.doctest', 'sphinx.ext.githubpages']

source_suffix = '.rst'

master_doc = 'index'

project = u'ncdwf'
copyright = u'2026 ncdwf developers'
author = u'ncdwf developers'

with open('../ncdwf/__init__.py') as _f:
    for _line in _f:
        if _line.startswith('__version__ = '):
            version = _line.split('=')[1].strip().strip('\'"')
release = version

exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']
pygments_style = 'sphinx'
todo_include_todos = False
highlight_language = 'python3'

# doctest snippets import the package from the source tree
doctest_path = [os.path.abspath('..')]


# -- Options for HTML output ----------------------------------------------

if not os.environ.get('READTHEDOCS'):
    html_theme = 'sphinx_rtd_theme'


# -- Options for LaTeX output ---------------------------------------------

latex_documents = [
    (master_doc, 'ncdwf.tex', u'ncdwf Documentation',
     u'ncdwf developers', 'manual'),
]
