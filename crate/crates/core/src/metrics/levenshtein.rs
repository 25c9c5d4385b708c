//! Unit-cost Levenshtein distance over Unicode scalar values.
//!
//! Uses the blocked bit-vector recurrence (Myers / Hyyrö): the shorter text
//! is the pattern, split into 64-row blocks, and each column of the DP
//! matrix is advanced one block at a time with the horizontal delta carried
//! between blocks. Complexity is `O(ceil(m / 64) * n)`.

use std::collections::HashMap;

const WORD: usize = 64;

/// Per-character match masks for the pattern, one `u64` per block.
struct PatternMasks {
    blocks: usize,
    ascii: Vec<Option<usize>>,
    other: HashMap<char, usize>,
    masks: Vec<u64>,
}

impl PatternMasks {
    fn new(pattern: &[char]) -> Self {
        let blocks = pattern.len().div_ceil(WORD);
        let mut out = Self {
            blocks,
            ascii: vec![None; 128],
            other: HashMap::new(),
            masks: Vec::new(),
        };
        for (i, &c) in pattern.iter().enumerate() {
            let slot = out.slot_or_insert(c);
            out.masks[slot * blocks + i / WORD] |= 1u64 << (i % WORD);
        }
        out
    }

    fn slot_or_insert(&mut self, c: char) -> usize {
        let next = self.masks.len() / self.blocks;
        let slot = if (c as u32) < 128 {
            *self.ascii[c as usize].get_or_insert(next)
        } else {
            *self.other.entry(c).or_insert(next)
        };
        if slot == next {
            self.masks.resize(self.masks.len() + self.blocks, 0);
        }
        slot
    }

    fn get(&self, c: char) -> Option<&[u64]> {
        let slot = if (c as u32) < 128 {
            self.ascii[c as usize]?
        } else {
            *self.other.get(&c)?
        };
        Some(&self.masks[slot * self.blocks..(slot + 1) * self.blocks])
    }
}

/// One block step. `hp_in`/`hn_in` are the incoming horizontal delta as
/// bits (at most one set). Returns the unshifted horizontal deltas.
#[inline(always)]
fn advance(pv: &mut u64, mv: &mut u64, eq: u64, hp_in: u64, hn_in: u64) -> (u64, u64) {
    let xv = eq | *mv;
    let eq = eq | hn_in;
    let xh = ((eq & *pv).wrapping_add(*pv) ^ *pv) | eq;
    let ph = *mv | !(xh | *pv);
    let mh = *pv & xh;
    let ph_s = (ph << 1) | hp_in;
    let mh_s = (mh << 1) | hn_in;
    *pv = mh_s | !(xv | ph_s);
    *mv = ph_s & xv;
    (ph, mh)
}

/// Blocked recurrence restricted to rows whose value can still be `<= k`
/// (Ukkonen cutoff at block granularity). Returns the distance when it is
/// at most `k`.
///
/// Invariants per column: the last computed block reaches at least one row
/// past the last row with value `<= k`; a block above the first computed
/// one holds only values `> k`. Cells outside the computed range are
/// treated as growing by one per step, which never undercuts a true value,
/// so every cell with true value `<= k` is computed exactly.
fn banded(masks: &PatternMasks, m: usize, text: &[char], k: usize) -> Option<usize> {
    let blocks = masks.blocks;
    let rows_in = |b: usize| if b + 1 == blocks { m - b * WORD } else { WORD };
    let last_shift = (m - 1) % WORD;
    let zeros = vec![0u64; blocks];
    let k = k as i64;
    // (pv, mv, value at the block's bottom row)
    let mut state: Vec<(u64, u64, i64)> = Vec::with_capacity(blocks);
    let mut bottom = 0i64;
    let mut last = (k as usize + 1).div_ceil(WORD).min(blocks) - 1;
    for b in 0..=last {
        bottom += rows_in(b) as i64;
        state.push((!0, 0, bottom));
    }
    let mut first = 0usize;
    for &c in text {
        let eq = masks.get(c).unwrap_or(&zeros);
        let (mut hp, mut hn) = (1u64, 0u64);
        for (b, (pv, mv, score)) in state.iter_mut().enumerate().take(last + 1).skip(first) {
            let (ph, mh) = advance(pv, mv, eq[b], hp, hn);
            hp = ph >> (WORD - 1);
            hn = mh >> (WORD - 1);
            if b + 1 == blocks {
                *score += ((ph >> last_shift) & 1) as i64 - ((mh >> last_shift) & 1) as i64;
            } else {
                *score += hp as i64 - hn as i64;
            }
        }
        if last + 1 < blocks && state[last].2 <= k {
            // The new block starts from the previous column's bottom value
            // of the block above, growing by one per row.
            let above = state[last].2 - (hp as i64 - hn as i64);
            last += 1;
            let mut pv = !0u64;
            let mut mv = 0u64;
            let (ph, mh) = advance(&mut pv, &mut mv, eq[last], hp, hn);
            let shift = if last + 1 == blocks { last_shift } else { WORD - 1 };
            let score = above + rows_in(last) as i64 + ((ph >> shift) & 1) as i64 - ((mh >> shift) & 1) as i64;
            if state.len() == last {
                state.push((pv, mv, score));
            } else {
                state[last] = (pv, mv, score);
            }
        }
        while first <= last && state[first].2 - (rows_in(first) as i64 - 1) > k {
            first += 1;
        }
        if first > last {
            return None;
        }
    }
    let d = state[last].2;
    (last + 1 == blocks && d <= k).then_some(d as usize)
}

fn bit_parallel(pattern: &[char], text: &[char]) -> usize {
    let m = pattern.len();
    let masks = PatternMasks::new(pattern);
    // Try narrow bands first; a band wider than an eighth of the pattern is
    // not worth it over the full matrix.
    let mut k = (text.len() - m).max(WORD);
    while 2 * k + 2 * WORD < m / 8 {
        if let Some(d) = banded(&masks, m, text, k) {
            return d;
        }
        k *= 2;
    }
    banded(&masks, m, text, m + text.len()).expect("full band always finishes")
}

/// Edit distance with unit-cost insertions, deletions and substitutions.
pub fn levenshtein(a: &str, b: &str) -> usize {
    if a == b {
        return 0;
    }
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

pub fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    let (a, b) = (&a[prefix..], &b[prefix..]);
    let suffix = a
        .iter()
        .rev()
        .zip(b.iter().rev())
        .take_while(|(x, y)| x == y)
        .count();
    let (a, b) = (&a[..a.len() - suffix], &b[..b.len() - suffix]);
    let (pattern, text) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if pattern.is_empty() {
        return text.len();
    }
    bit_parallel(pattern, text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dp(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut prev: Vec<usize> = (0..=b.len()).collect();
        for i in 1..=a.len() {
            let mut cur = vec![i; b.len() + 1];
            for j in 1..=b.len() {
                let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
                cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
            }
            prev = cur;
        }
        prev[b.len()]
    }

    #[test]
    fn small_cases() {
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("abc", "abc"), 0);
        assert_eq!(levenshtein("abc", ""), 3);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("", ""), 0);
        assert_eq!(levenshtein("Straße", "Strasse"), 2);
        assert_eq!(levenshtein("日本語", "日本"), 1);
    }

    #[test]
    fn block_boundaries() {
        // pattern lengths around multiples of the word size
        for m in [63usize, 64, 65, 127, 128, 129, 200] {
            let a: String = (0..m).map(|i| (b'a' + (i * 7 % 5) as u8) as char).collect();
            let b: String = (0..m + 13)
                .map(|i| (b'a' + (i * 3 % 6) as u8) as char)
                .collect();
            assert_eq!(levenshtein(&a, &b), dp(&a, &b), "m={m}");
        }
    }

    #[test]
    fn banded_matches_dp_on_long_near_duplicates() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let alphabet: Vec<char> = "abcde fgh".chars().collect();
        for edits in [0usize, 3, 40, 150, 400, 1500] {
            let len = rng.gen_range(2500..4000);
            let a: Vec<char> = (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
            let mut b = a.clone();
            for _ in 0..edits {
                let pos = rng.gen_range(0..b.len());
                match rng.gen_range(0..3) {
                    0 => b.insert(pos, alphabet[rng.gen_range(0..alphabet.len())]),
                    1 => {
                        b.remove(pos);
                    }
                    _ => b[pos] = alphabet[rng.gen_range(0..alphabet.len())],
                }
            }
            let (a, b): (String, String) = (a.into_iter().collect(), b.into_iter().collect());
            assert_eq!(levenshtein(&a, &b), dp(&a, &b), "edits={edits}");
        }
    }

    #[test]
    fn band_contract() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let alphabet: Vec<char> = "abcd".chars().collect();
        for _ in 0..300 {
            let m = rng.gen_range(1..400);
            let n = m + rng.gen_range(0..80);
            let p: Vec<char> = (0..m).map(|_| alphabet[rng.gen_range(0..4)]).collect();
            let mut t: Vec<char> = p.clone();
            for _ in 0..rng.gen_range(0..60) {
                let pos = rng.gen_range(0..t.len());
                t[pos] = alphabet[rng.gen_range(0..4)];
            }
            while t.len() < n {
                let pos = rng.gen_range(0..=t.len());
                t.insert(pos, alphabet[rng.gen_range(0..4)]);
            }
            let (ps, ts): (String, String) = (p.iter().collect(), t.iter().collect());
            let truth = dp(&ps, &ts);
            let masks = PatternMasks::new(&p);
            for k in [0usize, 1, 5, 20, 63, 64, 65, 100, 200, 500] {
                let got = banded(&masks, m, &t, k);
                let want = (truth <= k).then_some(truth);
                assert_eq!(got, want, "m={m} n={} k={k}", t.len());
            }
        }
    }
}
