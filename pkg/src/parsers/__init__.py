"""
Parsers package initialization
"""
from src.parsers.mesh_io import load_mesh, save_mesh
from src.parsers.image_io import read_image, write_image
from src.parsers.camera_io import load_cameras, save_cameras

__all__ = ["load_mesh", "save_mesh", "read_image", "write_image", "load_cameras", "save_cameras"]
