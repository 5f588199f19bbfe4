"""Simulation, discrimination and streaming readout of trapped-ion qubits
detected with a photomultiplier or an EMCCD camera."""

from .detector import (DepumpingSpec, EmccdModel, PmtModel, QubitState, calibrate_emccd, calibrate_pmt,
                       emccd_sample, multi_ion_counts, pmt_pmf, pmt_sample)
from .discriminator import (JointOutcomes, PreparationScheme, TwoIonThresholds, classify, classify_global,
                            crosstalk_estimate, joint_outcomes, optimal_threshold, preparation_error,
                            spam_curve, spam_error)
from .fitters import (BeatFit, RabiFit, RabiSeries, background_ratio, beat_envelope_minimum, fit_beat,
                      fit_poisson_hist, fit_rabi)
from .histogram import CountHistogram
from .optics import (BinningArea, FrameGeometry, IonSite, PsfModel, binned_readout, expected_image,
                     psf_intensity, roi_fraction)
from .pipeline import DecisionRecord, FrameRecord, PipelineConfig, run_stream, simulate_source
from .sequencer import (CameraDutyModel, SequenceSegment, SequenceTimeline, build_standard_sequence,
                        decision_latency, throughput, validate)

__version__ = "0.1.0"
