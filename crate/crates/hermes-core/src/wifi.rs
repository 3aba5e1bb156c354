//! Dual-interface Wi-Fi abstraction.
//!
//! Every node runs a softAP side that accepts children and a STA side that
//! attaches to exactly one parent, so the union of parent links is a forest.
//! The AP address is derived from the MAC and never changes; the STA address
//! is leased from the current parent's /24 and changes on every re-parent.

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SSID_PREFIX: &str = "mesh-";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacAddress(pub [u8; 6]);

impl MacAddress {
    pub fn last_two(&self) -> (u8, u8) {
        (self.0[4], self.0[5])
    }
}

impl fmt::Display for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02X}:{:02X}:{:02X}:{:02X}:{:02X}:{:02X}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid MAC address: {0}")]
pub struct MacParseError(String);

impl FromStr for MacAddress {
    type Err = MacParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 6 {
            return Err(MacParseError(s.to_string()));
        }
        let mut bytes = [0u8; 6];
        for (i, p) in parts.iter().enumerate() {
            bytes[i] = u8::from_str_radix(p, 16).map_err(|_| MacParseError(s.to_string()))?;
        }
        Ok(MacAddress(bytes))
    }
}

/// Static AP address: first octet fixed at 10, middle octets from the last
/// two MAC bytes, host octet 1. The gateway of the node's WLAN is this same
/// address.
pub fn derive_ap_ip(mac: MacAddress) -> Ipv4Addr {
    let (a, b) = mac.last_two();
    Ipv4Addr::new(10, a, b, 1)
}

/// The /24 prefix of an AP address, used for all leases it hands out.
pub fn subnet_of(ap_ip: Ipv4Addr) -> [u8; 3] {
    let o = ap_ip.octets();
    [o[0], o[1], o[2]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeviceKind {
    #[serde(rename = "class-8266")]
    Class8266,
    #[serde(rename = "class-32")]
    Class32,
    #[serde(rename = "class-pi")]
    ClassPi,
}

impl DeviceKind {
    pub fn name(self) -> &'static str {
        match self {
            DeviceKind::Class8266 => "class-8266",
            DeviceKind::Class32 => "class-32",
            DeviceKind::ClassPi => "class-pi",
        }
    }
}

/// Per-device capabilities. Delay fields are virtual milliseconds; the
/// slowest class pays the most for every handled event, received frame and
/// computed neuron, which is what separates the device classes in reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub kind: DeviceKind,
    pub capacity: u32,
    pub max_children: usize,
    pub compute_delay_per_neuron: u64,
    pub event_delay: u64,
    pub frame_delay: u64,
}

impl DeviceProfile {
    pub fn for_kind(kind: DeviceKind) -> Self {
        match kind {
            DeviceKind::Class8266 => DeviceProfile {
                kind,
                capacity: 1,
                max_children: 4,
                compute_delay_per_neuron: 8,
                event_delay: 12,
                frame_delay: 8,
            },
            DeviceKind::Class32 => DeviceProfile {
                kind,
                capacity: 2,
                max_children: 10,
                compute_delay_per_neuron: 4,
                event_delay: 6,
                frame_delay: 4,
            },
            DeviceKind::ClassPi => DeviceProfile {
                kind,
                capacity: 3,
                max_children: 16,
                compute_delay_per_neuron: 1,
                event_delay: 3,
                frame_delay: 2,
            },
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConnectError {
    #[error("parent at capacity ({0} children)")]
    ParentFull(usize),
    #[error("child already registered")]
    DuplicateChild,
}

/// The softAP side: fixed address, SSID, and the DHCP lease book mapping
/// each child's AP IP to the STA IP it was assigned.
#[derive(Debug, Clone)]
pub struct ApInterface {
    pub ssid: String,
    pub ap_ip: Ipv4Addr,
    pub children: BTreeMap<Ipv4Addr, Ipv4Addr>,
    pub max_children: usize,
    dhcp_next: u8,
    pub up: bool,
}

impl ApInterface {
    pub fn new(label: &str, ap_ip: Ipv4Addr, max_children: usize) -> Self {
        ApInterface {
            ssid: format!("{SSID_PREFIX}{label}"),
            ap_ip,
            children: BTreeMap::new(),
            max_children,
            dhcp_next: 2,
            up: false,
        }
    }

    pub fn start(&mut self) {
        self.up = true;
        self.dhcp_next = 2;
    }

    /// Tear down: all leases released, counter reset.
    pub fn stop(&mut self) {
        self.up = false;
        self.children.clear();
        self.dhcp_next = 2;
    }

    pub fn has_capacity(&self) -> bool {
        self.children.len() < self.max_children
    }

    /// Register a child and lease it a STA address from this AP's /24.
    /// The host counter only moves forward (mod 254, skipping taken hosts),
    /// so a freed octet is not reused until the counter wraps.
    pub fn accept_child(&mut self, child_ap_ip: Ipv4Addr) -> Result<Ipv4Addr, ConnectError> {
        if self.children.contains_key(&child_ap_ip) {
            return Err(ConnectError::DuplicateChild);
        }
        if !self.has_capacity() {
            return Err(ConnectError::ParentFull(self.children.len()));
        }
        let prefix = subnet_of(self.ap_ip);
        let taken: Vec<u8> = self
            .children
            .values()
            .map(|ip| ip.octets()[3])
            .collect();
        let mut host = self.dhcp_next;
        loop {
            if !taken.contains(&host) {
                break;
            }
            host = if host >= 254 { 2 } else { host + 1 };
        }
        self.dhcp_next = if host >= 254 { 2 } else { host + 1 };
        let sta_ip = Ipv4Addr::new(prefix[0], prefix[1], prefix[2], host);
        self.children.insert(child_ap_ip, sta_ip);
        Ok(sta_ip)
    }

    pub fn release_child(&mut self, child_ap_ip: Ipv4Addr) -> Option<Ipv4Addr> {
        self.children.remove(&child_ap_ip)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StaState {
    Idle,
    Connecting,
    Connected,
}

/// The STA side: at most one parent at a time.
#[derive(Debug, Clone)]
pub struct StaInterface {
    pub state: StaState,
    pub parent_ap_ip: Option<Ipv4Addr>,
    pub sta_ip: Option<Ipv4Addr>,
}

impl StaInterface {
    pub fn new() -> Self {
        StaInterface {
            state: StaState::Idle,
            parent_ap_ip: None,
            sta_ip: None,
        }
    }

    pub fn connect(&mut self, parent_ap_ip: Ipv4Addr, sta_ip: Ipv4Addr) {
        self.state = StaState::Connected;
        self.parent_ap_ip = Some(parent_ap_ip);
        self.sta_ip = Some(sta_ip);
    }

    pub fn disconnect(&mut self) -> Option<Ipv4Addr> {
        let old = self.parent_ap_ip.take();
        self.sta_ip = None;
        self.state = StaState::Idle;
        old
    }
}

impl Default for StaInterface {
    fn default() -> Self {
        Self::new()
    }
}

/// One scan result: a visible node whose AP is up.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanHit {
    pub ssid: String,
    pub ap_ip: Ipv4Addr,
    pub quality: f64,
}
