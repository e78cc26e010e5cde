"""Document schemas and JSON loading and saving."""
