use sha2::{Digest, Sha256};

use crate::field::SphereField;
use crate::radial::RadialProfile;

/// Content hash of the numerical inputs of a certificate.
pub trait InputDigest {
    fn feed(&self, hasher: &mut Sha256);

    fn digest_hex(&self) -> String {
        let mut h = Sha256::new();
        self.feed(&mut h);
        hex::encode(h.finalize())
    }
}

fn feed_f64s(h: &mut Sha256, xs: impl IntoIterator<Item = f64>) {
    for x in xs {
        h.update(x.to_le_bytes());
    }
}

impl InputDigest for SphereField {
    fn feed(&self, h: &mut Sha256) {
        h.update(b"sfld");
        feed_f64s(h, [self.grid().half_width(), self.grid().n() as f64]);
        feed_f64s(h, self.boundary_value());
        feed_f64s(h, self.values().iter().flat_map(|v| *v));
    }
}

impl InputDigest for RadialProfile {
    fn feed(&self, h: &mut Sha256) {
        h.update(b"prof");
        h.update((self.m() as u64).to_le_bytes());
        feed_f64s(h, self.nodes().iter().copied());
        feed_f64s(h, self.values().iter().copied());
    }
}

impl InputDigest for [f64] {
    fn feed(&self, h: &mut Sha256) {
        feed_f64s(h, self.iter().copied());
    }
}

/// Digest of a labelled list of numbers.
pub fn digest_numbers(label: &str, xs: &[f64]) -> String {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    xs.feed(&mut h);
    hex::encode(h.finalize())
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
