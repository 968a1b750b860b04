from .cdf import CdfTable, build_cdf, gaussian_table, sigma_bin, uniform_table
from .codec import DecodeStats, HashMismatchError, decode_image, encode_image, estimated_bits
from .container import BitstreamContainer, BudgetError, FormatError, truncate
from .rangecoder import CorruptStreamError, range_decode, range_encode

__all__ = [
    "BitstreamContainer", "BudgetError", "CdfTable", "CorruptStreamError", "DecodeStats", "FormatError",
    "HashMismatchError", "build_cdf", "decode_image", "encode_image", "estimated_bits", "gaussian_table",
    "range_decode", "range_encode", "sigma_bin", "truncate", "uniform_table",
]
