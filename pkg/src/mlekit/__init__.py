"""Multi-contrast laser endoscopy processing toolkit."""
