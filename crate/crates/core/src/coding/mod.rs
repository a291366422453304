//! Generations, coded packets, progressive decoding and the constrained
//! vector-selection procedures used by the grouped coding protocol.

mod decoder;
mod packet;
mod pool;
mod segment;
mod transmit;

pub use decoder::DecoderState;
pub use packet::{encode, CodedPacket};
pub use pool::{build_vector_pool, build_vector_universe, CodingVectorPool, VectorUniverse, MAX_UNIVERSE};
pub use segment::{
    form_packet_groups, segment_content, segment_content_capped, GroupLayout, PacketGroup, SegmentPlan,
    DEFAULT_SEGMENT_CAP,
};
pub use transmit::{
    constraint_init, constraint_update, dsnc_transmit_group, select_vector, BacklogCounter, DeliveryReport,
    ReceptionIndicator, TransmissionLog, TransmitOptions, TransmitRecord,
};

use crate::gf::FieldError;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodingError {
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("expected length {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("packet of group {got} offered to decoder of group {expected}")]
    GroupMismatch { expected: u32, got: u32 },
    #[error("decoder not ready, rank gap {gap}")]
    NotReady { gap: usize },
    #[error("GF(2^{bits}) is too small for {n}-dimensional coding vectors")]
    FieldTooSmall { bits: u8, n: usize },
    #[error("coding vector pool is exhausted")]
    PoolExhausted,
    #[error("inconsistent delivery report: {0}")]
    Consistency(String),
    #[error("group {group_id} stalled with {backlogged} backlogged peers after {sends} sends")]
    Stall { group_id: u32, backlogged: usize, sends: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
}

impl CodingError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CodingError::Invalid(msg.into())
    }
}
