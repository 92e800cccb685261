//! Named parameter tensors and the `EPRM` container format.
//!
//! Layout (little-endian): magic `EPRM`, version byte `1`, u32 entry count,
//! then per entry a u16 name length, the UTF-8 name and one complete `ETEN`
//! tensor record. Entries are written in key order.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::network::{LayerOp, NetworkSpec};
use crate::rng::Rng;
use crate::tensor::read_exact_or;
use crate::{Error, Result, Scalar, Tensor};

pub const PARAMS_MAGIC: &[u8; 4] = b"EPRM";
pub const PARAMS_VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T = f64> {
    entries: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: BTreeMap::new() }
    }

    /// He-uniform weights (`±sqrt(6 / fan_in)`) and zero biases, drawn layer
    /// by layer in network order.
    pub fn init(net: &NetworkSpec, rng: &mut Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        for l in &net.layers {
            if let LayerOp::Conv(c) = &l.op {
                let fan_in = (c.kernel_h * c.kernel_w * c.in_channels) as f64;
                let bound = T::of((6.0 / fan_in).sqrt());
                store.insert(l.weight_key(), Tensor::rand_uniform(c.weight_dims(), rng, -bound, bound)?);
                if c.has_bias {
                    store.insert(l.bias_key(), Tensor::zeros(c.bias_dims())?);
                }
            }
        }
        Ok(store)
    }

    /// All-zero tensors with the shapes `net` demands.
    pub fn zeros_for(net: &NetworkSpec) -> Result<Self> {
        let mut store = ParamStore::new();
        for (k, d) in net.param_demands() {
            store.insert(k, Tensor::zeros(d)?);
        }
        Ok(store)
    }

    pub fn insert(&mut self, key: impl Into<String>, t: Tensor<T>) -> Option<Tensor<T>> {
        self.entries.insert(key.into(), t)
    }

    pub fn remove(&mut self, key: &str) -> Option<Tensor<T>> {
        self.entries.remove(key)
    }

    pub fn get(&self, key: &str) -> Option<&Tensor<T>> {
        self.entries.get(key)
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(key)
    }

    /// Like [`get`](Self::get) but a missing key is a parameter error.
    pub fn require(&self, key: &str) -> Result<&Tensor<T>> {
        self.entries.get(key).ok_or_else(|| Error::param(key, "missing"))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Errors unless the keys and shapes are exactly those `net` demands.
    pub fn check_against(&self, net: &NetworkSpec) -> Result<()> {
        let demands = net.param_demands();
        for (k, d) in &demands {
            let t = self.require(k)?;
            if t.dims() != *d {
                return Err(Error::param(k, format!("expected shape {d}, found {}", t.dims())));
            }
        }
        if let Some(extra) = self.keys().find(|k| !demands.contains_key(*k)) {
            return Err(Error::param(extra, "not used by the network"));
        }
        Ok(())
    }

    /// Errors unless both stores have identical keys and shapes.
    pub fn check_congruent(&self, other: &Self) -> Result<()> {
        for (k, t) in self.iter() {
            let o = other.get(k).ok_or_else(|| Error::param(k, "missing from the other store"))?;
            if o.dims() != t.dims() {
                return Err(Error::param(k, format!("shape {} vs {}", t.dims(), o.dims())));
            }
        }
        if let Some(extra) = other.keys().find(|k| self.get(k).is_none()) {
            return Err(Error::param(extra, "missing from this store"));
        }
        Ok(())
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.len() == other.len()
            && self.iter().all(|(k, t)| other.get(k).is_some_and(|o| o.bit_eq(t)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(PARAMS_MAGIC);
        out.push(PARAMS_VERSION);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            let bytes = name.as_bytes();
            out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
            out.extend_from_slice(bytes);
            out.extend_from_slice(&t.to_bytes());
        }
        out
    }

    pub fn write_to(&self, sink: &mut impl Write) -> Result<()> {
        for name in self.entries.keys() {
            if name.len() > u16::MAX as usize {
                return Err(Error::param(name.clone(), "name longer than 65535 bytes"));
            }
        }
        sink.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(source: &mut impl Read) -> Result<Self> {
        let mut head = [0u8; 9];
        read_exact_or(source, &mut head, "header")?;
        if &head[0..4] != PARAMS_MAGIC {
            return Err(Error::format("magic", format!("expected EPRM, found {:?}", &head[0..4])));
        }
        if head[4] != PARAMS_VERSION {
            return Err(Error::format("version", format!("unsupported version {}", head[4])));
        }
        let count = u32::from_le_bytes(head[5..9].try_into().unwrap());
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let mut len = [0u8; 2];
            read_exact_or(source, &mut len, "name_len")?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            read_exact_or(source, &mut name, "name")?;
            let name = String::from_utf8(name).map_err(|e| Error::format("name", e.to_string()))?;
            let t = Tensor::read_from(source)?;
            if entries.insert(name.clone(), t).is_some() {
                return Err(Error::DuplicateName(name));
            }
        }
        Ok(ParamStore { entries })
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut bytes)
    }
}

/// `p <- p - lr * g` for every parameter.
pub fn sgd_step<T: Scalar>(params: &mut ParamStore<T>, grads: &ParamStore<T>, lr: T) -> Result<()> {
    params.check_congruent(grads)?;
    for (k, p) in params.iter_mut() {
        let g = grads.get(k).expect("congruent stores share keys");
        for (x, &d) in p.data_mut().iter_mut().zip(g.data()) {
            *x -= lr * d;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::new((1, 1, 1), v).unwrap()
    }

    #[test]
    fn sgd_arithmetic() {
        let mut p = ParamStore::new();
        p.insert("w", scalar(1.0));
        let mut g = ParamStore::new();
        g.insert("w", scalar(0.5));
        let before = p.clone();
        sgd_step(&mut p, &g, 0.0).unwrap();
        assert!(p.bit_eq(&before));
        sgd_step(&mut p, &g, 0.1).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[0.95]);
    }

    #[test]
    fn sgd_key_mismatch() {
        let mut p = ParamStore::new();
        p.insert("w", scalar(1.0));
        let mut g = ParamStore::new();
        g.insert("v", scalar(0.5));
        assert!(matches!(sgd_step(&mut p, &g, 0.1), Err(Error::Param { .. })));
    }

    #[test]
    fn empty_store_is_header_only() {
        let b = ParamStore::<f64>::new().to_bytes();
        assert_eq!(b, vec![b'E', b'P', b'R', b'M', 1, 0, 0, 0, 0]);
        assert!(ParamStore::<f64>::from_bytes(&b).unwrap().is_empty());
    }

    #[test]
    fn duplicate_entry_rejected() {
        let rec = scalar(2.0).to_bytes();
        let mut b = Vec::new();
        b.extend_from_slice(b"EPRM");
        b.push(1);
        b.extend_from_slice(&2u32.to_le_bytes());
        for _ in 0..2 {
            b.extend_from_slice(&3u16.to_le_bytes());
            b.extend_from_slice(b"c.w");
            b.extend_from_slice(&rec);
        }
        match ParamStore::<f64>::from_bytes(&b) {
            Err(Error::DuplicateName(n)) => assert_eq!(n, "c.w"),
            other => panic!("expected duplicate-name error, got {other:?}"),
        }
    }

    #[test]
    fn corrupt_container() {
        let mut p = ParamStore::new();
        p.insert("a", scalar(1.0));
        let good = p.to_bytes();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(ParamStore::<f64>::from_bytes(&bad), Err(Error::Format { field: "magic", .. })));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(ParamStore::<f64>::from_bytes(&bad), Err(Error::Format { field: "version", .. })));
        assert!(matches!(
            ParamStore::<f64>::from_bytes(&good[..good.len() - 3]),
            Err(Error::Format { field: "payload", .. })
        ));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(n in 0usize..6, seed: u64) {
            let mut rng = Rng::new(seed);
            let mut p = ParamStore::<f64>::new();
            for k in 0..n {
                let d = (rng.range_inclusive(1, 3), rng.range_inclusive(1, 3), rng.range_inclusive(1, 4));
                p.insert(format!("layer{k}.weight"), Tensor::rand_uniform(d, &mut rng, -10.0, 10.0).unwrap());
            }
            let back = ParamStore::<f64>::from_bytes(&p.to_bytes()).unwrap();
            prop_assert!(p.bit_eq(&back));
        }
    }
}
