//! Brute-force corpus BLEU: n-grams compared by linear scan, no hashing.

pub struct Oracle {
    pub precisions: [f64; 4],
    pub bp: f64,
    pub bleu: [f64; 4],
}

fn count(hay: &[String], needle: &[String]) -> usize {
    if needle.len() > hay.len() {
        return 0;
    }
    (0..=hay.len() - needle.len())
        .filter(|&i| &hay[i..i + needle.len()] == needle)
        .count()
}

/// Clipped matches and total hypothesis n-grams of order `n` for one pair.
fn clipped(hyp: &[String], reference: &[String], n: usize) -> (usize, usize) {
    if hyp.len() < n {
        return (0, 0);
    }
    let total = hyp.len() - n + 1;
    let mut seen: Vec<&[String]> = Vec::new();
    let mut matched = 0;
    for i in 0..total {
        let gram = &hyp[i..i + n];
        if seen.contains(&gram) {
            continue;
        }
        seen.push(gram);
        matched += count(hyp, gram).min(count(reference, gram));
    }
    (matched, total)
}

/// Conventions: p_n = m_n / t_n; a zero count at n >= 2 becomes
/// 1 / (t_n + 1); with t_1 = 0, p_1 is 1 when the references are empty too
/// and 0 otherwise. BP is 1 if c > r, exp(1 - r / c) if 0 < c <= r, 0 if
/// c = 0 < r, and 1 if c = r = 0.
pub fn bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Oracle {
    assert_eq!(hyps.len(), refs.len());
    let mut m = [0usize; 4];
    let mut t = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hyps.iter().zip(refs) {
        c += h.len();
        r += rf.len();
        for n in 1..=4 {
            let (a, b) = clipped(h, rf, n);
            m[n - 1] += a;
            t[n - 1] += b;
        }
    }
    let mut p = [0.0; 4];
    for n in 0..4 {
        p[n] = if t[n] == 0 {
            if n == 0 {
                if r == 0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                1.0
            }
        } else if m[n] == 0 && n > 0 {
            1.0 / (t[n] as f64 + 1.0)
        } else {
            m[n] as f64 / t[n] as f64
        };
    }
    let bp = if c == 0 {
        if r == 0 {
            1.0
        } else {
            0.0
        }
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let mut bleu = [0.0; 4];
    for n in 0..4 {
        let logs: f64 = p[..=n].iter().map(|x| x.ln()).sum();
        bleu[n] = if p[..=n].contains(&0.0) {
            0.0
        } else {
            bp * (logs / (n + 1) as f64).exp()
        };
    }
    Oracle {
        precisions: p,
        bp,
        bleu,
    }
}

pub const TOLERANCE: f64 = 1e-9;

/// Compares the library against the oracle on one corpus.
pub fn agrees(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<(), String> {
    let got = cot_curate::metrics::bleu::bleu_tokens(hyps, refs).map_err(|e| e.to_string())?;
    let want = bleu(hyps, refs);
    let close = |a: f64, b: f64| (a - b).abs() <= TOLERANCE;
    let ok = close(got.brevity_penalty, want.bp)
        && (0..4).all(|n| {
            close(got.precisions[n], want.precisions[n]) && close(got.bleu[n], want.bleu[n])
        });
    if ok {
        Ok(())
    } else {
        Err(format!(
            "hyps={hyps:?} refs={refs:?}: library p={:?} bp={} bleu={:?}, oracle p={:?} bp={} bleu={:?}",
            got.precisions, got.brevity_penalty, got.bleu, want.precisions, want.bp, want.bleu
        ))
    }
}

/// Every sequence over `alphabet` with length at most `max_len`.
pub fn sequences(alphabet: &[&str], max_len: usize) -> Vec<Vec<String>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::<String>::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for a in alphabet {
                let mut t = s.clone();
                t.push(a.to_string());
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Sequences of exactly `len` tokens.
pub fn sequences_of(alphabet: &[&str], len: usize) -> Vec<Vec<String>> {
    sequences(alphabet, len)
        .into_iter()
        .filter(|s| s.len() == len)
        .collect()
}
