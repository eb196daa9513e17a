"""Simulation of an interface-based side channel against SGX-protected network
functions, the page and packet fingerprinting attack built on it, and the
padding and batching countermeasures."""

from .classifier import LSTMParams, SequenceSample, TrainConfig, forward, loss_and_grad, train
from .collector import Collector, CollectorConfig, VirtualClock
from .countermeasures import BatchPolicy, MaxLen, MultipleOf, pad_length
from .enclave import ChainTopology, DelayModel, ServiceChain, generate_rules
from .experiment import ExperimentConfig, MetricsReport, run_experiment
from .metrics import bandwidth_overhead, packet_metrics, page_metrics
from .profiling import PageProfile, build_profile, collect_visits, extract_constant_packets
from .recognition import (MatchingIndicator, RecognitionEngine, clear_indicator, interval_filter,
                          r_appeared)
from .trace import InterfaceEvent, PacketFeatureVector, ProfiledPacket, features_match
from .traffic import Corpus, CorpusParams, generate_corpus, interleave_sessions

__version__ = "0.1.0"
