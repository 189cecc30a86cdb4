import sys

from prandtl_lab.cli import main

sys.exit(main())
