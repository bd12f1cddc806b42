pub mod augment;
pub mod grs_eval;
pub mod simulate;
