import sys

from quasiergodic.cli import main

sys.exit(main())
