//! Proactive destination-based routing with sequence numbers.
//!
//! Every node keeps one entry per known destination: next hop, hop count and
//! a freshness sequence number. Destinations issue even sequence numbers
//! (+2 per update they originate); a neighbor detecting a link break marks
//! the destination with stored seq + 1, so odd numbers are explicit
//! unreachability marks until a newer even update reinstates the route.
//! Because the topology is a tree, losing a neighbor invalidates every
//! route through it.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use thiserror::Error;

/// Wire value for an unreachable hop count.
pub const INFINITE_HOPS: u8 = 255;

pub fn is_unreachable_seq(seq: u32) -> bool {
    seq % 2 == 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteEntry {
    pub dest: Ipv4Addr,
    pub next_hop: Ipv4Addr,
    pub hops: u8,
    pub seq: u32,
}

impl RouteEntry {
    pub fn reachable(&self) -> bool {
        self.hops != INFINITE_HOPS
    }
}

/// One advertised (dest, hops, seq) triple. 9 bytes on the wire:
/// 4 B dest + 1 B hops (255 = infinity) + 4 B seq.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Advertised {
    pub dest: Ipv4Addr,
    pub hops: u8,
    pub seq: u32,
}

pub const TRIPLE_LEN: usize = 9;

impl Advertised {
    pub fn encode_into(&self, buf: &mut Vec<u8>) {
        buf.extend_from_slice(&self.dest.octets());
        buf.push(self.hops);
        buf.extend_from_slice(&self.seq.to_be_bytes());
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() < TRIPLE_LEN {
            return None;
        }
        Some(Advertised {
            dest: Ipv4Addr::new(b[0], b[1], b[2], b[3]),
            hops: b[4],
            seq: u32::from_be_bytes([b[5], b[6], b[7], b[8]]),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateKind {
    Fru,
    Pru,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingUpdate {
    pub kind: UpdateKind,
    pub sender: Ipv4Addr,
    pub advertised: Vec<Advertised>,
}

impl RoutingUpdate {
    pub fn encode_payload(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.advertised.len() * TRIPLE_LEN);
        for a in &self.advertised {
            a.encode_into(&mut buf);
        }
        buf
    }

    pub fn decode_payload(sender: Ipv4Addr, kind: UpdateKind, payload: &[u8]) -> Self {
        let advertised = payload
            .chunks_exact(TRIPLE_LEN)
            .filter_map(Advertised::decode)
            .collect();
        RoutingUpdate {
            kind,
            sender,
            advertised,
        }
    }
}

/// What applying one advertised triple did to the table. The first three
/// are the significant classes that propagate immediately; minor updates
/// wait for the next full update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    NewNode,
    PathChange,
    LinkFailure,
    Minor,
    Discarded,
}

impl Classification {
    pub fn is_significant(self) -> bool {
        matches!(
            self,
            Classification::NewNode | Classification::PathChange | Classification::LinkFailure
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Classification::NewNode => "new-node",
            Classification::PathChange => "path-change",
            Classification::LinkFailure => "link-failure",
            Classification::Minor => "minor",
            Classification::Discarded => "discarded",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RouteError {
    #[error("no route to {0}")]
    NoRoute(Ipv4Addr),
}

#[derive(Debug, Clone)]
pub struct RoutingTable {
    own_ip: Ipv4Addr,
    own_seq: u32,
    entries: BTreeMap<Ipv4Addr, RouteEntry>,
    /// Destinations with significant changes since the last full update.
    pending: BTreeSet<Ipv4Addr>,
}

impl RoutingTable {
    pub fn new(own_ip: Ipv4Addr) -> Self {
        RoutingTable {
            own_ip,
            own_seq: 0,
            entries: BTreeMap::new(),
            pending: BTreeSet::new(),
        }
    }

    pub fn own_ip(&self) -> Ipv4Addr {
        self.own_ip
    }

    pub fn own_seq(&self) -> u32 {
        self.own_seq
    }

    pub fn entries(&self) -> impl Iterator<Item = &RouteEntry> {
        self.entries.values()
    }

    pub fn entry(&self, dest: Ipv4Addr) -> Option<&RouteEntry> {
        self.entries.get(&dest)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pending_changes(&self) -> impl Iterator<Item = Ipv4Addr> + '_ {
        self.pending.iter().copied()
    }

    /// Clear everything learned; keeps only the node's own identity and
    /// sequence number (which survives restarts so peers see fresh updates).
    pub fn reset(&mut self) {
        self.entries.clear();
        self.pending.clear();
    }

    pub fn bump_own_seq(&mut self) -> u32 {
        self.own_seq += 2;
        debug_assert!(self.own_seq % 2 == 0);
        self.own_seq
    }

    /// Apply one advertised triple heard from a direct neighbor.
    ///
    /// Unknown destination: inserted with next hop = sender and advertised
    /// hops + 1, unless the advert itself is an unreachability mark (there
    /// is nothing to invalidate). Known destination: older seq discarded;
    /// equal seq replaces only on a strictly shorter path; newer seq
    /// replaces unconditionally, including unreachability marks.
    pub fn apply_advertisement(&mut self, sender: Ipv4Addr, adv: Advertised) -> Classification {
        if adv.dest == self.own_ip {
            return Classification::Discarded;
        }
        // Parity and hop count must agree; an even-seq advert claiming
        // infinite hops is malformed and ignored.
        let adv_unreachable = is_unreachable_seq(adv.seq);
        if !adv_unreachable && adv.hops == INFINITE_HOPS {
            return Classification::Discarded;
        }
        let new_hops = if adv_unreachable {
            INFINITE_HOPS
        } else {
            adv.hops.saturating_add(1).min(INFINITE_HOPS - 1)
        };

        let class = match self.entries.get(&adv.dest) {
            None => {
                if adv_unreachable {
                    return Classification::Discarded;
                }
                self.entries.insert(
                    adv.dest,
                    RouteEntry {
                        dest: adv.dest,
                        next_hop: sender,
                        hops: new_hops,
                        seq: adv.seq,
                    },
                );
                Classification::NewNode
            }
            Some(stored) => {
                if adv.seq < stored.seq {
                    Classification::Discarded
                } else if adv.seq == stored.seq {
                    if !adv_unreachable && stored.reachable() && new_hops < stored.hops {
                        self.entries.insert(
                            adv.dest,
                            RouteEntry {
                                dest: adv.dest,
                                next_hop: sender,
                                hops: new_hops,
                                seq: adv.seq,
                            },
                        );
                        Classification::PathChange
                    } else {
                        Classification::Discarded
                    }
                } else {
                    let was_reachable = stored.reachable();
                    let was_next_hop = stored.next_hop;
                    let was_hops = stored.hops;
                    self.entries.insert(
                        adv.dest,
                        RouteEntry {
                            dest: adv.dest,
                            next_hop: if adv_unreachable { was_next_hop } else { sender },
                            hops: new_hops,
                            seq: adv.seq,
                        },
                    );
                    if adv_unreachable {
                        if was_reachable {
                            Classification::LinkFailure
                        } else {
                            Classification::Minor
                        }
                    } else if !was_reachable {
                        // Reinstated route: significant, descendants key off it.
                        Classification::PathChange
                    } else if was_next_hop != sender || was_hops != new_hops {
                        Classification::PathChange
                    } else {
                        Classification::Minor
                    }
                }
            }
        };
        if class.is_significant() {
            self.pending.insert(adv.dest);
        }
        class
    }

    /// A direct link just broke: mark the neighbor unreachable (stored seq
    /// + 1, hops = infinity) and, because routes form a tree, do the same to
    /// every destination routed through it. Returns the invalidated
    /// destinations; unknown neighbor is a no-op.
    pub fn mark_neighbor_unreachable(&mut self, neighbor: Ipv4Addr) -> Vec<Ipv4Addr> {
        if !self.entries.contains_key(&neighbor) {
            return Vec::new();
        }
        let mut invalidated = Vec::new();
        for entry in self.entries.values_mut() {
            let via_broken = entry.dest == neighbor || entry.next_hop == neighbor;
            if via_broken && entry.reachable() {
                entry.seq += 1;
                entry.hops = INFINITE_HOPS;
                invalidated.push(entry.dest);
            }
        }
        for dest in &invalidated {
            self.pending.insert(*dest);
        }
        invalidated
    }

    /// Drop an entry entirely (used when a restarting node resets state).
    pub fn remove(&mut self, dest: Ipv4Addr) {
        self.entries.remove(&dest);
        self.pending.remove(&dest);
    }

    fn self_advertisement(&self) -> Advertised {
        Advertised {
            dest: self.own_ip,
            hops: 0,
            seq: self.own_seq,
        }
    }

    /// Build the periodic update. Partial ticks carry the pending
    /// significant changes plus the self-advertisement (own seq bumped
    /// first); when that set grows to `threshold` of a full table, or on a
    /// full-update tick, the entire table goes out instead and the pending
    /// set clears.
    pub fn build_update(&mut self, fru_tick: bool, threshold: f64) -> RoutingUpdate {
        self.bump_own_seq();
        let pru_len = self.pending.len() + 1;
        let full_len = self.entries.len() + 1;
        let promote = pru_len as f64 >= threshold * full_len as f64;
        if fru_tick || promote {
            let mut advertised: Vec<Advertised> = self
                .entries
                .values()
                .map(|e| Advertised {
                    dest: e.dest,
                    hops: e.hops,
                    seq: e.seq,
                })
                .collect();
            advertised.push(self.self_advertisement());
            self.pending.clear();
            RoutingUpdate {
                kind: UpdateKind::Fru,
                sender: self.own_ip,
                advertised,
            }
        } else {
            let mut advertised: Vec<Advertised> = self
                .pending
                .iter()
                .filter_map(|d| self.entries.get(d))
                .map(|e| Advertised {
                    dest: e.dest,
                    hops: e.hops,
                    seq: e.seq,
                })
                .collect();
            advertised.push(self.self_advertisement());
            RoutingUpdate {
                kind: UpdateKind::Pru,
                sender: self.own_ip,
                advertised,
            }
        }
    }

    /// Current stored triples for the given destinations, for immediate
    /// event-driven propagation.
    pub fn triples_for(&self, dests: &[Ipv4Addr]) -> Vec<Advertised> {
        dests
            .iter()
            .filter_map(|d| self.entries.get(d))
            .map(|e| Advertised {
                dest: e.dest,
                hops: e.hops,
                seq: e.seq,
            })
            .collect()
    }

    pub fn next_hop(&self, dest: Ipv4Addr) -> Result<Ipv4Addr, RouteError> {
        match self.entries.get(&dest) {
            Some(e) if e.reachable() => Ok(e.next_hop),
            _ => Err(RouteError::NoRoute(dest)),
        }
    }
}

/// Where to physically hand a message for `dest`: locally, to the parent's
/// AP address, or to a child's STA address (children are always reached
/// through their STA interface, looked up in the lease book).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryAddress {
    Local,
    ParentAp(Ipv4Addr),
    ChildSta { child_ap: Ipv4Addr, sta: Ipv4Addr },
}

pub fn next_hop_address(
    table: &RoutingTable,
    dest: Ipv4Addr,
    parent_ap: Option<Ipv4Addr>,
    children: &BTreeMap<Ipv4Addr, Ipv4Addr>,
) -> Result<DeliveryAddress, RouteError> {
    if dest == table.own_ip() {
        return Ok(DeliveryAddress::Local);
    }
    let hop = table.next_hop(dest)?;
    if Some(hop) == parent_ap {
        return Ok(DeliveryAddress::ParentAp(hop));
    }
    if let Some(&sta) = children.get(&hop) {
        return Ok(DeliveryAddress::ChildSta { child_ap: hop, sta });
    }
    // Table says the next hop is neither the parent nor a current child:
    // the link is gone but the entry has not been invalidated yet.
    Err(RouteError::NoRoute(dest))
}
