"""Time-domain stochastic network calculus: curves, bounding functions, models,
bounds, and a packet-level simulator to check them."""

__version__ = "0.1.0"

from .curves import (UNBOUNDED, Curve, CurveError, GridSpec, horizontal_deviation,
                     lower_pseudo_inverse, max_plus_conv, max_plus_deconv, min_plus_conv,
                     min_plus_deconv, sup_forward_gap, sup_growth_gap, upper_pseudo_inverse)
from .bounding import (BoundingFn, ccdf_min_plus_conv, clamp_one, erlang_iat_bound,
                       md1_vsd_bound, negbin_service_tail, tail_integral)
from .models import (ServerModel, TrafficModel, constant_server, cs_to_id, gcra_arrival,
                     iat_to_vsd, id_to_cs, md1_vsd_arrival, poisson_iat_arrival, vbc_to_vsd,
                     vsd_to_iat, vsd_to_vbc, wireless_id_server)
from .analysis import (backlog_bound, concatenate, delay_bound, leftover_service_trace,
                       output_characterization, stability_check, superpose)

__all__ = [
    "UNBOUNDED", "Curve", "CurveError", "GridSpec", "horizontal_deviation",
    "lower_pseudo_inverse", "max_plus_conv", "max_plus_deconv", "min_plus_conv",
    "min_plus_deconv", "sup_forward_gap", "sup_growth_gap", "upper_pseudo_inverse",
    "BoundingFn", "ccdf_min_plus_conv", "clamp_one", "erlang_iat_bound", "md1_vsd_bound",
    "negbin_service_tail", "tail_integral",
    "ServerModel", "TrafficModel", "constant_server", "cs_to_id", "gcra_arrival", "iat_to_vsd",
    "id_to_cs", "md1_vsd_arrival", "poisson_iat_arrival", "vbc_to_vsd", "vsd_to_iat",
    "vsd_to_vbc", "wireless_id_server",
    "backlog_bound", "concatenate", "delay_bound", "leftover_service_trace",
    "output_characterization", "stability_check", "superpose",
]
