//! Bit-accurate fixed-point inference: Q-format arithmetic, transposed-FIR
//! evaluation order with wide accumulators, and power-of-two weights.

mod fir;
mod fixed;
mod model;

pub use fir::{direct_fir, direct_fir_wide, transposed_fir, transposed_fir_wide};
pub use fixed::{
    check_acc_bits, dequantize, q_mac_sequence, quantize, quantize_counted, required_acc_bits,
    requantize, shift_round_even, QFormat, QTensor, SaturationCounter, DEFAULT_ACC_BITS,
};
pub use model::{
    pot_round, q_cnn_forward, q_cnn_forward_raw, quantize_features, quantize_model, quantize_model_with,
    read_golden_csv,
    write_golden_csv, QCnnModel, QForward, QLayer, QStats, QuantMode, QUANT_FILE_VERSION,
};
