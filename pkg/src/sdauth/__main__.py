import sys

from sdauth.cli import main

sys.exit(main())
