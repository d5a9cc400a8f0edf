use serde::{Deserialize, Serialize};

/// One architecture of the reference model family with its parameter counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeTableRow {
    pub enc_layers: u32,
    pub dec_layers: u32,
    pub emb_dim: u32,
    pub n_heads: u32,
    pub head_dim: u32,
    pub mlp_dim: u32,
    /// Nominal vocabulary class ("128k" is stored as 128 000).
    pub vocab_size: u32,
    pub n_total: u64,
    /// Non-embedding parameter count used for fitting.
    pub n_corrected: u64,
}

/// Vocabularies in `[128 000, 131 072]` all belong to the nominal 128k class.
const VOCAB_CLASS: (u32, u32) = (128_000, 131_072);

const fn row(
    layers: u32,
    emb_dim: u32,
    n_heads: u32,
    head_dim: u32,
    mlp_dim: u32,
    n_total: u64,
    n_corrected: u64,
) -> SizeTableRow {
    SizeTableRow {
        enc_layers: layers,
        dec_layers: layers,
        emb_dim,
        n_heads,
        head_dim,
        mlp_dim,
        vocab_size: 128_000,
        n_total,
        n_corrected,
    }
}

static TABLE: [SizeTableRow; 8] = [
    row(2, 512, 8, 64, 2048, 149_953_024, 18_881_024),
    row(3, 768, 12, 64, 3072, 260_322_816, 63_714_816),
    row(6, 768, 12, 64, 3072, 324_035_328, 127_427_328),
    row(9, 768, 12, 64, 3072, 387_747_840, 191_139_840),
    row(9, 1024, 16, 64, 4096, 601_931_776, 339_787_776),
    row(12, 1024, 16, 64, 4096, 715_193_344, 453_049_344),
    row(12, 1280, 16, 80, 5120, 1_035_876_864, 707_869_184),
    row(12, 1536, 16, 96, 6144, 1_412_528_128, 1_019_312_128),
];

pub fn reference_size_table() -> &'static [SizeTableRow] {
    &TABLE
}

/// Architecture fields to look up. `vocab_size: None` matches any row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchQuery {
    pub enc_layers: u32,
    pub dec_layers: u32,
    pub emb_dim: u32,
    pub n_heads: u32,
    pub head_dim: u32,
    pub mlp_dim: u32,
    pub vocab_size: Option<u32>,
}

pub fn lookup(q: &ArchQuery) -> Option<SizeTableRow> {
    if let Some(v) = q.vocab_size {
        if !(VOCAB_CLASS.0..=VOCAB_CLASS.1).contains(&v) {
            return None;
        }
    }
    TABLE
        .iter()
        .find(|r| {
            (r.enc_layers, r.dec_layers, r.emb_dim, r.n_heads, r.head_dim, r.mlp_dim)
                == (q.enc_layers, q.dec_layers, q.emb_dim, q.n_heads, q.head_dim, q.mlp_dim)
        })
        .copied()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(l: u32, e: u32, h: u32, hd: u32, m: u32, v: Option<u32>) -> ArchQuery {
        ArchQuery {
            enc_layers: l,
            dec_layers: l,
            emb_dim: e,
            n_heads: h,
            head_dim: hd,
            mlp_dim: m,
            vocab_size: v,
        }
    }

    #[test]
    fn first_and_last_rows() {
        let first = lookup(&q(2, 512, 8, 64, 2048, Some(128_000))).unwrap();
        assert_eq!(first.n_total, 149_953_024);
        assert_eq!(first.n_corrected, 18_881_024);
        let last = lookup(&q(12, 1536, 16, 96, 6144, None)).unwrap();
        assert_eq!(last.n_corrected, 1_019_312_128);
    }

    #[test]
    fn unknown_architecture() {
        assert!(lookup(&q(4, 512, 8, 64, 2048, None)).is_none());
        assert!(lookup(&q(2, 512, 8, 64, 2048, Some(32_000))).is_none());
    }

    #[test]
    fn rows_are_consistent() {
        for r in reference_size_table() {
            assert!(r.n_corrected < r.n_total);
            assert_eq!(r.n_heads * r.head_dim, r.emb_dim);
            assert_eq!(r.mlp_dim, 4 * r.emb_dim);
            assert_eq!(lookup(&q(r.enc_layers, r.emb_dim, r.n_heads, r.head_dim, r.mlp_dim, Some(131_072))), Some(*r));
        }
    }
}
