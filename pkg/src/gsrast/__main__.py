import sys

from gsrast.cli import main

sys.exit(main())
