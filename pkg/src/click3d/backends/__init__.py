"""Example external backends speaking the click3d/1 wire protocol."""
