"""Measuring how much of a network's input domain violates a safety property."""

from .errors import AdvRateError, ConfigError, ContractError, NumericError, ParseError, ShapeError
from .intervals import Box, Interval, propagate, propagate_functional, propagate_layers
from .network import Activation, Layer, Network, argmax_action, forward, init_network
from .verifier import (ArgmaxAtom, Label, LinearAtom, Property, RegionReport, VerifierConfig,
                       adversarial_rate, check_witness, classify_box, decide,
                       extract_counterexamples)

__version__ = "0.1.0"
