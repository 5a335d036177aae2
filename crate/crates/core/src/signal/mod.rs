//! Signal side of the pipeline: stimulus model, EEG synthesis, filtering,
//! spectral features, windowing and the on-disk dataset format.

mod dataset;
mod filter;
mod spectrum;
mod stimulus;
mod synth;
mod window;

pub use dataset::{read_dataset, write_dataset, EpochedDataset, Subject, Trial, DATASET_MAGIC};
pub use filter::{bandpass, Butterworth};
pub use spectrum::{amplitude_spectrum, fft_feature_bins, fft_features};
pub use stimulus::{stimulus_chrominance, StimulusConfig};
pub use synth::{generate_dataset, synthesize_trial, SubjectModel, SynthesisConfig};
pub use window::{extract_window, WindowSpec};
