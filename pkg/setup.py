import setuptools

with open('VERSION', 'r') as version_file:
    version = version_file.read().strip()

with open('README.md') as fp:
    long_description = fp.read()

setuptools.setup(
    name='hsat',
    version=version,

    description='Hierarchical self-supervised adversarial training for patient/slide/patch image data',
    long_description=long_description,
    long_description_content_type='text/markdown',
    keywords=['adversarial-training', 'contrastive-learning', 'histopathology', 'autodiff'],

    package_dir={'hsat': 'hsat'},
    packages=setuptools.find_packages(exclude=('tests', 'tests.*')),
    package_data={'hsat': ['presets/*.json']},

    install_requires=[
        'numpy>=1.20',
        'scikit-learn>=0.24',
        'pandas>=1.2',
        'logzero~=1.5.0',
        'dictor~=0.1.3',
    ],

    entry_points={
        'console_scripts': [
            'hsat=hsat.cli.main:main',
        ],
    },

    include_package_data=True,

    python_requires='>=3.8',

    classifiers=[
        'Development Status :: 4 - Beta',

        'Intended Audience :: Science/Research',

        'License :: OSI Approved :: Apache Software License',

        'Programming Language :: Python :: 3 :: Only',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',

        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Topic :: Scientific/Engineering :: Image Recognition',

        'Typing :: Typed',
    ],
)
