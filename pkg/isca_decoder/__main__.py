"""Entry point: python -m isca_decoder"""

from . import main

raise SystemExit(main())
