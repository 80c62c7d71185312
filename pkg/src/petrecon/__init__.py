"""PET reconstruction toolkit."""
