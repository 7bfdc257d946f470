//! Snapshot files. Two encodings carry the same information and both reload
//! bit-exactly: a line-oriented count dump for diffing and a compact
//! little-endian binary. The loader detects which one it was given.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::model::{NgramModel, OrderTable, MAX_ORDER};
use crate::error::{Error, Result};
use crate::TokenId;

const TEXT_HEADER: &str = "synthforge-ngram 1";
const BINARY_MAGIC: &[u8; 4] = b"SFNG";
const BINARY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotFormat {
    #[default]
    Binary,
    Text,
}

impl std::str::FromStr for SnapshotFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(SnapshotFormat::Binary),
            "text" => Ok(SnapshotFormat::Text),
            _ => Err(Error::argument(format!("unknown snapshot format `{s}` (binary|text)"))),
        }
    }
}

impl NgramModel {
    pub fn to_bytes(&self, format: SnapshotFormat) -> Vec<u8> {
        match format {
            SnapshotFormat::Text => self.to_text().into_bytes(),
            SnapshotFormat::Binary => self.to_binary(),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let model = if bytes.starts_with(BINARY_MAGIC) {
            Self::from_binary(bytes)?
        } else {
            let text = std::str::from_utf8(bytes).map_err(|_| Error::format("snapshot is neither binary nor UTF-8 text"))?;
            Self::from_text(text)?
        };
        model.check()?;
        Ok(model)
    }

    fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{TEXT_HEADER}").unwrap();
        writeln!(s, "order {}", self.order).unwrap();
        writeln!(s, "vocab_size {}", self.vocab_size).unwrap();
        writeln!(s, "add_k {}", self.add_k).unwrap();
        let w: Vec<String> = self.weights.iter().map(|w| w.to_string()).collect();
        writeln!(s, "weights {}", w.join(" ")).unwrap();
        for table in &self.tables {
            writeln!(s, "table {} {}", table.ctx_len, table.n_contexts()).unwrap();
            for i in 0..table.n_contexts() {
                let ctx: Vec<String> = table.context(i).iter().map(|t| t.to_string()).collect();
                s.push_str(&ctx.join(" "));
                s.push_str(" |");
                let (toks, counts) = table.row(i);
                for (t, c) in toks.iter().zip(counts) {
                    write!(s, " {t}:{c}").unwrap();
                }
                s.push('\n');
            }
        }
        s
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut next = |what: &str| lines.next().ok_or_else(|| Error::format(format!("snapshot truncated before {what}")));
        if next("header")? != TEXT_HEADER {
            return Err(Error::format("unrecognized n-gram snapshot header"));
        }
        fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| Error::format(format!("expected `{key}` line, found `{line}`")))
        }
        fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
            s.parse().map_err(|_| Error::format(format!("bad number `{s}`")))
        }
        let order: usize = num(field(next("order")?, "order")?)?;
        let vocab_size: usize = num(field(next("vocab_size")?, "vocab_size")?)?;
        let add_k: f64 = num(field(next("add_k")?, "add_k")?)?;
        let weights = field(next("weights")?, "weights")?
            .split(' ')
            .map(num)
            .collect::<Result<Vec<f64>>>()?;
        if order == 0 || order > MAX_ORDER {
            return Err(Error::format(format!("order {order} out of range")));
        }
        let mut tables = Vec::with_capacity(order);
        for k in 0..order {
            let head = field(next("table")?, "table")?;
            let (len, n) = head.split_once(' ').ok_or_else(|| Error::format("bad table line"))?;
            if num::<usize>(len)? != k {
                return Err(Error::format(format!("table {len} out of order")));
            }
            let n: usize = num(n)?;
            let mut rows = Vec::new();
            for _ in 0..n {
                let line = next("table row")?;
                let (ctx, entries) = line.split_once('|').ok_or_else(|| Error::format("row without `|`"))?;
                let ctx: Vec<TokenId> = ctx.split_whitespace().map(num).collect::<Result<_>>()?;
                if ctx.len() != k {
                    return Err(Error::format(format!("context of length {} in table {k}", ctx.len())));
                }
                for e in entries.split_whitespace() {
                    let (t, c) = e.split_once(':').ok_or_else(|| Error::format(format!("bad entry `{e}`")))?;
                    let mut key = ctx.clone();
                    key.push(num(t)?);
                    rows.push((key, num::<u32>(c)?));
                }
            }
            check_sorted(&rows)?;
            tables.push(OrderTable::from_sorted(k, rows));
        }
        if lines.next().is_some_and(|l| !l.trim().is_empty()) {
            return Err(Error::format("trailing data after last table"));
        }
        Ok(NgramModel::from_parts(order, vocab_size, add_k, weights, tables))
    }

    fn to_binary(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(BINARY_MAGIC);
        b.extend_from_slice(&BINARY_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.order as u32).to_le_bytes());
        b.extend_from_slice(&(self.vocab_size as u64).to_le_bytes());
        b.extend_from_slice(&self.add_k.to_bits().to_le_bytes());
        for w in &self.weights {
            b.extend_from_slice(&w.to_bits().to_le_bytes());
        }
        for t in &self.tables {
            b.extend_from_slice(&(t.n_contexts() as u64).to_le_bytes());
            b.extend_from_slice(&(t.tokens.len() as u64).to_le_bytes());
            t.contexts.iter().for_each(|x| b.extend_from_slice(&x.to_le_bytes()));
            t.offsets.iter().for_each(|x| b.extend_from_slice(&x.to_le_bytes()));
            t.tokens.iter().for_each(|x| b.extend_from_slice(&x.to_le_bytes()));
            t.counts.iter().for_each(|x| b.extend_from_slice(&x.to_le_bytes()));
        }
        b
    }

    fn from_binary(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 4 };
        if r.u32()? != BINARY_VERSION {
            return Err(Error::format("unsupported binary snapshot version"));
        }
        let order = r.u32()? as usize;
        if order == 0 || order > MAX_ORDER {
            return Err(Error::format(format!("order {order} out of range")));
        }
        let vocab_size = r.u64()? as usize;
        let add_k = f64::from_bits(r.u64()?);
        let weights = (0..order).map(|_| r.u64().map(f64::from_bits)).collect::<Result<Vec<_>>>()?;
        let mut tables = Vec::with_capacity(order);
        for k in 0..order {
            let n_ctx = r.u64()? as usize;
            let n_tok = r.u64()? as usize;
            let contexts = r.u32s(n_ctx.checked_mul(k).ok_or_else(|| Error::format("table too large"))?)?;
            let offsets = r.u32s(n_ctx + 1)?;
            let tokens = r.u32s(n_tok)?;
            let counts = r.u32s(n_tok)?;
            if offsets.first() != Some(&0) || *offsets.last().unwrap() as usize != n_tok || offsets.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::format(format!("corrupt offsets in table {k}")));
            }
            let totals = offsets
                .windows(2)
                .map(|w| counts[w[0] as usize..w[1] as usize].iter().map(|&c| c as u64).sum())
                .collect();
            tables.push(OrderTable { ctx_len: k, contexts, offsets, totals, tokens, counts });
        }
        if r.pos != bytes.len() {
            return Err(Error::format("trailing bytes after last table"));
        }
        Ok(NgramModel::from_parts(order, vocab_size, add_k, weights, tables))
    }

    /// Structural validation of a loaded model.
    fn check(&self) -> Result<()> {
        if self.vocab_size == 0 || !(self.add_k > 0.0 && self.add_k.is_finite()) {
            return Err(Error::format("invalid vocab_size or add_k"));
        }
        if self.weights.len() != self.order
            || self.weights.iter().any(|w| w.is_nan() || *w < 0.0)
            || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::format("invalid interpolation weights"));
        }
        for t in &self.tables {
            for i in 0..t.n_contexts() {
                if i > 0 && t.context(i - 1) >= t.context(i) {
                    return Err(Error::format(format!("contexts not sorted in table {}", t.ctx_len)));
                }
                let (toks, counts) = t.row(i);
                if toks.windows(2).any(|w| w[0] >= w[1]) || counts.contains(&0) {
                    return Err(Error::format(format!("corrupt row in table {}", t.ctx_len)));
                }
            }
            let max_id = t.contexts.iter().chain(&t.tokens).copied().max().unwrap_or(0);
            if t.n_contexts() > 0 && max_id as usize >= self.vocab_size {
                return Err(Error::format(format!("token {max_id} outside vocabulary")));
            }
        }
        Ok(())
    }
}

fn check_sorted(rows: &[(Vec<TokenId>, u32)]) -> Result<()> {
    if rows.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::format("snapshot rows are not strictly sorted"));
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format("binary snapshot truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::format("table too large"))?)?;
        Ok(raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}
