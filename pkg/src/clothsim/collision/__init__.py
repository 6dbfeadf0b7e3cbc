from .pairs import VT, EE, PairSet, ndb_weights, update_ndb_weights, dbb_weight, dbb_weight_gradient
from .geometry import point_triangle_closest, segment_segment_closest, pair_witness
from .ccd import distance_toi, full_ccd, global_toi, coplanarity_coefficients
from .partial import SampleSet, default_samples, lattice_samples, sample_bound, query_q, partial_ccd
from .bvh import PatchBVH, broad_phase, build_patches, swept_boxes

__all__ = [
    "VT",
    "EE",
    "PairSet",
    "ndb_weights",
    "update_ndb_weights",
    "dbb_weight",
    "dbb_weight_gradient",
    "point_triangle_closest",
    "segment_segment_closest",
    "pair_witness",
    "distance_toi",
    "full_ccd",
    "global_toi",
    "coplanarity_coefficients",
    "SampleSet",
    "default_samples",
    "lattice_samples",
    "sample_bound",
    "query_q",
    "partial_ccd",
    "PatchBVH",
    "broad_phase",
    "build_patches",
    "swept_boxes",
]
