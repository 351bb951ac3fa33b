"""File codecs: SIMV volumes, PFM maps, PLY meshes, 16-bit PNG, JSON."""
from .images import read_intensity_png, read_png16, write_intensity_png, write_png16
from .jsonio import (chain_from_dict, chain_to_dict, dumps, read_camera_json, read_json, read_pose_json,
                     write_camera_json, write_json, write_pose_json)
from .pfm import PfmError, decode_pfm, encode_pfm, read_pfm, write_pfm
from .ply import decode_ply, encode_ply, read_ply, write_ply
from .simv import SimvError, decode_simv, encode_simv, read_simv, write_simv
