import sys

from mdfn.cli import main

sys.exit(main())
