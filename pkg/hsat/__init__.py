from importlib import metadata

__product__ = 'hsat'
try:
    __version__ = metadata.version(__product__)
except metadata.PackageNotFoundError:
    __version__ = '0.0.0.dev0'
__package__ = f'{__product__}-{__version__}'
