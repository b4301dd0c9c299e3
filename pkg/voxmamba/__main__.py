import sys

from voxmamba.app import main

sys.exit(main())
