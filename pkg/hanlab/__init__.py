from hanlab._version import __version__
