"""Module entry point so ``python -m ficd`` mirrors the console script."""

from ficd.cli import main

if __name__ == "__main__":
    raise SystemExit(main())
