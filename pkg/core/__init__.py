"""Core modules of the secure ISAC design tool."""
