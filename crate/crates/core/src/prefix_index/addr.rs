use std::fmt;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::str::FromStr;

use num_bigint::BigUint;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PrefixError {
    #[error("invalid IP address `{0}`")]
    InvalidAddress(String),
    #[error("invalid prefix length in `{input}` (max {max})")]
    InvalidLength { input: String, max: u8 },
    #[error("non-canonical prefix `{input}`: host bits set (canonical form is {canonical})")]
    NonCanonical { input: String, canonical: IpPrefix },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    V4,
    V6,
}

impl Family {
    pub const fn width(self) -> u8 {
        match self {
            Family::V4 => 32,
            Family::V6 => 128,
        }
    }
}

/// An IPv4 or IPv6 address stored as a right-aligned integer.
///
/// Ordering puts every v4 address before every v6 address, then compares the
/// numeric value.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IpAddress {
    family: Family,
    bits: u128,
}

impl IpAddress {
    pub const fn v4(bits: u32) -> Self {
        Self {
            family: Family::V4,
            bits: bits as u128,
        }
    }

    pub const fn v6(bits: u128) -> Self {
        Self {
            family: Family::V6,
            bits,
        }
    }

    pub const fn family(self) -> Family {
        self.family
    }

    pub const fn bits(self) -> u128 {
        self.bits
    }

    pub const fn is_v4(self) -> bool {
        matches!(self.family, Family::V4)
    }

    /// Bits shifted so the most significant address bit is bit 127.
    pub(crate) const fn key(self) -> u128 {
        match self.family {
            Family::V4 => self.bits << 96,
            Family::V6 => self.bits,
        }
    }

    pub(crate) const fn from_key(family: Family, key: u128) -> Self {
        match family {
            Family::V4 => Self::v4((key >> 96) as u32),
            Family::V6 => Self::v6(key),
        }
    }

    pub fn to_std(self) -> IpAddr {
        match self.family {
            Family::V4 => IpAddr::V4(Ipv4Addr::from(self.bits as u32)),
            Family::V6 => IpAddr::V6(Ipv6Addr::from(self.bits)),
        }
    }
}

impl From<IpAddr> for IpAddress {
    fn from(ip: IpAddr) -> Self {
        match ip {
            IpAddr::V4(v4) => v4.into(),
            IpAddr::V6(v6) => v6.into(),
        }
    }
}

impl From<Ipv4Addr> for IpAddress {
    fn from(ip: Ipv4Addr) -> Self {
        Self::v4(u32::from(ip))
    }
}

impl From<Ipv6Addr> for IpAddress {
    fn from(ip: Ipv6Addr) -> Self {
        Self::v6(u128::from(ip))
    }
}

impl From<IpAddress> for IpAddr {
    fn from(ip: IpAddress) -> Self {
        ip.to_std()
    }
}

impl FromStr for IpAddress {
    type Err = PrefixError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<IpAddr>()
            .map(Self::from)
            .map_err(|_| PrefixError::InvalidAddress(s.to_string()))
    }
}

impl fmt::Display for IpAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.to_std().fmt(f)
    }
}

impl fmt::Debug for IpAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl Serialize for IpAddress {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for IpAddress {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub(crate) const fn mask(len: u8) -> u128 {
    if len == 0 {
        0
    } else {
        !0u128 << (128 - len as u32)
    }
}

/// A CIDR prefix whose host bits are all zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IpPrefix {
    network: IpAddress,
    len: u8,
}

impl IpPrefix {
    /// Builds a prefix, rejecting inputs with host bits set.
    pub fn new(addr: IpAddress, len: u8) -> Result<Self, PrefixError> {
        let canonical = Self::truncating(addr, len)?;
        if canonical.network != addr {
            return Err(PrefixError::NonCanonical {
                input: format!("{addr}/{len}"),
                canonical,
            });
        }
        Ok(canonical)
    }

    /// Builds a prefix, clearing any host bits.
    pub fn truncating(addr: IpAddress, len: u8) -> Result<Self, PrefixError> {
        let max = addr.family().width();
        if len > max {
            return Err(PrefixError::InvalidLength {
                input: format!("{addr}/{len}"),
                max,
            });
        }
        let key = addr.key() & mask(len);
        Ok(Self {
            network: IpAddress::from_key(addr.family(), key),
            len,
        })
    }

    /// The single-address prefix (/32 or /128).
    pub fn host(addr: IpAddress) -> Self {
        Self {
            network: addr,
            len: addr.family().width(),
        }
    }

    pub fn network(self) -> IpAddress {
        self.network
    }

    pub fn len(self) -> u8 {
        self.len
    }

    pub fn family(self) -> Family {
        self.network.family()
    }

    pub fn is_v4(self) -> bool {
        self.network.is_v4()
    }

    pub fn is_host(self) -> bool {
        self.len == self.family().width()
    }

    pub fn host_bits(self) -> u8 {
        self.family().width() - self.len
    }

    pub(crate) fn key(self) -> u128 {
        self.network.key()
    }

    pub fn contains(self, addr: IpAddress) -> bool {
        addr.family() == self.family() && (addr.key() & mask(self.len)) == self.key()
    }

    /// True when every address of `other` is inside `self`.
    pub fn covers(self, other: IpPrefix) -> bool {
        other.family() == self.family()
            && other.len >= self.len
            && (other.key() & mask(self.len)) == self.key()
    }

    pub fn address_count(self) -> BigUint {
        BigUint::from(1u8) << self.host_bits() as usize
    }

    /// Lowest and highest address, as right-aligned integers.
    pub fn range(self) -> (u128, u128) {
        let low = self.network.bits();
        let span = if self.host_bits() == 128 {
            u128::MAX
        } else {
            (1u128 << self.host_bits()) - 1
        };
        (low, low + span)
    }
}

impl FromStr for IpPrefix {
    type Err = PrefixError;

    /// Accepts `addr/len` or a bare address (host prefix).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('/') {
            None => Ok(Self::host(s.parse()?)),
            Some((addr, len)) => {
                let addr: IpAddress = addr.parse()?;
                let len: u8 = len.parse().map_err(|_| PrefixError::InvalidLength {
                    input: s.to_string(),
                    max: addr.family().width(),
                })?;
                Self::new(addr, len).map_err(|e| match e {
                    PrefixError::NonCanonical { canonical, .. } => PrefixError::NonCanonical {
                        input: s.to_string(),
                        canonical,
                    },
                    other => other,
                })
            }
        }
    }
}

impl fmt::Display for IpPrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.network, self.len)
    }
}

impl fmt::Debug for IpPrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl Serialize for IpPrefix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for IpPrefix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
