# -*- coding: utf-8 -*-
"""Allows running the command line interface with ``python -m fairaudit``."""

import sys

from .cli import main


sys.exit(main())
