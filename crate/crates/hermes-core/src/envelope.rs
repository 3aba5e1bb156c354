//! The single wire format carried on every link.
//!
//! Layout (all multi-byte fields big-endian), 22 bytes of header:
//!
//! ```text
//! magic     1 B   0x48
//! version   1 B   0x01
//! category  1 B   routing=1 lifecycle=2 middleware=3 data=4 monitoring=5
//! type tag  1 B   per-category message type
//! src       4 B   sender AP IP
//! dst       4 B   destination AP IP
//! final dst 4 B   inner destination when encapsulated, else 0.0.0.0
//! seq       4 B   per-source message counter
//! length    2 B   payload length
//! payload   length B
//! ```

use std::net::Ipv4Addr;

use thiserror::Error;

pub const MAGIC: u8 = 0x48;
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Category {
    Routing,
    Lifecycle,
    Middleware,
    Data,
    Monitoring,
}

impl Category {
    pub fn to_byte(self) -> u8 {
        match self {
            Category::Routing => 1,
            Category::Lifecycle => 2,
            Category::Middleware => 3,
            Category::Data => 4,
            Category::Monitoring => 5,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(Category::Routing),
            2 => Some(Category::Lifecycle),
            3 => Some(Category::Middleware),
            4 => Some(Category::Data),
            5 => Some(Category::Monitoring),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Routing => "routing",
            Category::Lifecycle => "lifecycle",
            Category::Middleware => "middleware",
            Category::Data => "data",
            Category::Monitoring => "monitoring",
        }
    }
}

/// Lifecycle message type tags.
pub mod lifecycle_tag {
    pub const PDR: u8 = 1;
    pub const PIR: u8 = 2;
    pub const CRR: u8 = 3;
    pub const ACK: u8 = 4;
    pub const TBA: u8 = 5;
    pub const TRN: u8 = 6;
    pub const PRN: u8 = 7;
}

/// Routing message type tags.
pub mod routing_tag {
    pub const FRU: u8 = 1;
    pub const PRU: u8 = 2;
}

/// Data message type tags.
pub mod data_tag {
    pub const NEURON_VALUE: u8 = 1;
    pub const NACK: u8 = 2;
    pub const REGISTER: u8 = 3;
    pub const REGISTER_ACK: u8 = 4;
    pub const ASSIGN: u8 = 5;
    pub const ASSIGN_ACK: u8 = 6;
    pub const START_INFERENCE: u8 = 7;
    pub const INFERENCE_RESULT: u8 = 8;
    pub const PING: u8 = 9;
    pub const PONG: u8 = 10;
    pub const GENERIC: u8 = 11;
}

/// Middleware strategy tags (the envelope type tag for category 3).
pub mod middleware_tag {
    pub const INJECT: u8 = 1;
    pub const PUBSUB: u8 = 2;
    pub const TOPOLOGY: u8 = 3;
}

/// Monitoring message type tags.
pub mod monitoring_tag {
    pub const STATE_DURATIONS: u8 = 1;
    pub const RECOVERY_REPORT: u8 = 2;
}

pub fn tag_name(category: Category, tag: u8) -> &'static str {
    match category {
        Category::Routing => match tag {
            routing_tag::FRU => "FRU",
            routing_tag::PRU => "PRU",
            _ => "?",
        },
        Category::Lifecycle => match tag {
            lifecycle_tag::PDR => "PDR",
            lifecycle_tag::PIR => "PIR",
            lifecycle_tag::CRR => "CRR",
            lifecycle_tag::ACK => "ACK",
            lifecycle_tag::TBA => "TBA",
            lifecycle_tag::TRN => "TRN",
            lifecycle_tag::PRN => "PRN",
            _ => "?",
        },
        Category::Middleware => match tag {
            middleware_tag::INJECT => "inject",
            middleware_tag::PUBSUB => "pubsub",
            middleware_tag::TOPOLOGY => "topology",
            _ => "?",
        },
        Category::Data => match tag {
            data_tag::NEURON_VALUE => "neuron-value",
            data_tag::NACK => "nack",
            data_tag::REGISTER => "register",
            data_tag::REGISTER_ACK => "register-ack",
            data_tag::ASSIGN => "assign",
            data_tag::ASSIGN_ACK => "assign-ack",
            data_tag::START_INFERENCE => "start-inference",
            data_tag::INFERENCE_RESULT => "inference-result",
            data_tag::PING => "ping",
            data_tag::PONG => "pong",
            data_tag::GENERIC => "generic",
            _ => "?",
        },
        Category::Monitoring => match tag {
            monitoring_tag::STATE_DURATIONS => "state-durations",
            monitoring_tag::RECOVERY_REPORT => "recovery-report",
            _ => "?",
        },
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("frame too short: {0} bytes, header needs {HEADER_LEN}")]
    Truncated(usize),
    #[error("bad magic byte {0:#04x}")]
    BadMagic(u8),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown category {0}")]
    BadCategory(u8),
    #[error("length field says {expected} payload bytes, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub category: Category,
    pub type_tag: u8,
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    /// Inner destination for encapsulated messages; 0.0.0.0 otherwise.
    pub final_dst: Ipv4Addr,
    pub seq: u32,
    pub payload: Vec<u8>,
}

impl Envelope {
    pub fn new(
        category: Category,
        type_tag: u8,
        src: Ipv4Addr,
        dst: Ipv4Addr,
        seq: u32,
        payload: Vec<u8>,
    ) -> Self {
        Envelope {
            category,
            type_tag,
            src,
            dst,
            final_dst: Ipv4Addr::UNSPECIFIED,
            seq,
            payload,
        }
    }

    pub fn is_encapsulated(&self) -> bool {
        self.final_dst != Ipv4Addr::UNSPECIFIED
    }

    /// The address the message is ultimately for: the inner destination when
    /// encapsulated, otherwise the plain destination.
    pub fn effective_final_dst(&self) -> Ipv4Addr {
        if self.is_encapsulated() {
            self.final_dst
        } else {
            self.dst
        }
    }

    /// Total on-wire size in bytes.
    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.wire_len());
        buf.push(MAGIC);
        buf.push(VERSION);
        buf.push(self.category.to_byte());
        buf.push(self.type_tag);
        buf.extend_from_slice(&self.src.octets());
        buf.extend_from_slice(&self.dst.octets());
        buf.extend_from_slice(&self.final_dst.octets());
        buf.extend_from_slice(&self.seq.to_be_bytes());
        buf.extend_from_slice(&(self.payload.len() as u16).to_be_bytes());
        buf.extend_from_slice(&self.payload);
        buf
    }

    pub fn decode(data: &[u8]) -> Result<Self, DecodeError> {
        if data.len() < HEADER_LEN {
            return Err(DecodeError::Truncated(data.len()));
        }
        if data[0] != MAGIC {
            return Err(DecodeError::BadMagic(data[0]));
        }
        if data[1] != VERSION {
            return Err(DecodeError::BadVersion(data[1]));
        }
        let category = Category::from_byte(data[2]).ok_or(DecodeError::BadCategory(data[2]))?;
        let type_tag = data[3];
        let src = Ipv4Addr::new(data[4], data[5], data[6], data[7]);
        let dst = Ipv4Addr::new(data[8], data[9], data[10], data[11]);
        let final_dst = Ipv4Addr::new(data[12], data[13], data[14], data[15]);
        let seq = u32::from_be_bytes([data[16], data[17], data[18], data[19]]);
        let expected = u16::from_be_bytes([data[20], data[21]]) as usize;
        let actual = data.len() - HEADER_LEN;
        if expected != actual {
            return Err(DecodeError::LengthMismatch { expected, actual });
        }
        Ok(Envelope {
            category,
            type_tag,
            src,
            dst,
            final_dst,
            seq,
            payload: data[HEADER_LEN..].to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Envelope {
        Envelope {
            category: Category::Data,
            type_tag: data_tag::NEURON_VALUE,
            src: Ipv4Addr::new(10, 1, 2, 1),
            dst: Ipv4Addr::new(10, 3, 4, 1),
            final_dst: Ipv4Addr::UNSPECIFIED,
            seq: 7,
            payload: vec![1, 2, 3],
        }
    }

    #[test]
    fn wire_len_is_header_plus_payload() {
        assert_eq!(sample().wire_len(), 22 + 3);
    }

    #[test]
    fn truncated_frames_rejected() {
        let bytes = sample().encode();
        for len in 0..HEADER_LEN {
            assert!(Envelope::decode(&bytes[..len]).is_err(), "len={len}");
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let mut bytes = sample().encode();
        bytes.push(0xFF);
        assert!(matches!(
            Envelope::decode(&bytes),
            Err(DecodeError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = sample().encode();
        bytes[0] = 0x00;
        assert_eq!(Envelope::decode(&bytes), Err(DecodeError::BadMagic(0)));
    }

    proptest! {
        #[test]
        fn roundtrip(cat in 1u8..=5, tag in 0u8..=20, seq in any::<u32>(),
                     src in any::<[u8; 4]>(), dst in any::<[u8; 4]>(),
                     fin in any::<[u8; 4]>(), payload in proptest::collection::vec(any::<u8>(), 0..128)) {
            let env = Envelope {
                category: Category::from_byte(cat).unwrap(),
                type_tag: tag,
                src: Ipv4Addr::from(src),
                dst: Ipv4Addr::from(dst),
                final_dst: Ipv4Addr::from(fin),
                seq,
                payload,
            };
            let decoded = Envelope::decode(&env.encode()).unwrap();
            prop_assert_eq!(decoded, env);
        }
    }
}
