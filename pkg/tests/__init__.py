"""Test package, so modules can share `tests.helpers`."""
