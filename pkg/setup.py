from setuptools import setup


def read_version_from_package():
    with open('ncdwf/__init__.py') as f:
        for line in f:
            if line.startswith('__version__ = '):
                return line.split('=')[1].strip().strip('\'"')


__version__ = read_version_from_package()

setup(
    name='ncdwf',
    version=__version__,
    author='ncdwf developers',
    description='Novel class discovery without forgetting, on feature vectors',
    long_description='''\
    Two-phase class discovery on precomputed embeddings:
    supervised training on labeled classes, then clustering of new
    classes with Sinkhorn pseudo-labels, pseudo-latent replay,
    a mutual-information regularizer and a known-class identifier
    that routes test samples to the right head.''',
    packages=['ncdwf'],
    python_requires='>=3.8',
    install_requires=['numpy>=1.17', 'scipy>=1.4', 'scikit-learn>=0.22',
                      'pydantic>=2'],
    entry_points={'console_scripts': ['ncdwf = ncdwf.cli:main']},
    zip_safe=False,
    license='MPL-2.0',
    keywords='novel class discovery, continual learning, clustering',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: Mozilla Public License 2.0 (MPL 2.0)',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Programming Language :: Python :: 3',
    ],
)
