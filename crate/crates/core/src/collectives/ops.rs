use super::{Direction, PipelineConfig, RankCtx};
use crate::error::{Error, Result};
use crate::gla::{decayed_add_rows, CumDecay, State};
use crate::tensor::Real;

fn expect_len<T>(payload: &[T], want: usize, from: usize, primitive: &str) -> Result<()> {
    if payload.len() != want {
        return Err(Error::Dims(format!("{primitive}: rank {from} sent {} elements, expected {want}", payload.len())));
    }
    Ok(())
}

/// Segment boundaries splitting `len` elements into `parts` near-equal runs.
fn segments(len: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    (0..parts).map(|i| len * i / parts..len * (i + 1) / parts).collect()
}

impl<T: Real> RankCtx<'_, T> {
    /// Ring all-gather of equally sized vectors under ledger label
    /// `primitive`. Takes `P−1` steps of one neighbour exchange each.
    pub fn all_gather_vec(&mut self, local: Vec<T>, primitive: &str) -> Result<Vec<Vec<T>>> {
        let (p, r) = (self.ranks(), self.index());
        let n = local.len();
        let mut slots: Vec<Option<Vec<T>>> = vec![None; p];
        slots[r] = Some(local);
        let (next, prev) = ((r + 1) % p, (r + p - 1) % p);
        for s in 0..p.saturating_sub(1) {
            let out = (r + p - s) % p;
            let inc = (r + 2 * p - s - 1) % p;
            let payload = slots[out].clone().expect("ring slot filled in an earlier step");
            self.send_tagged(next, payload, primitive)?;
            let got = self.recv_tagged(prev, primitive)?;
            expect_len(&got, n, prev, primitive)?;
            slots[inc] = Some(got);
        }
        Ok(slots.into_iter().map(|s| s.expect("all slots filled")).collect())
    }

    /// Every rank ends with all `P` states in rank order.
    pub fn all_gather(&mut self, local: &State<T>) -> Result<Vec<State<T>>> {
        let dims = local.dims();
        self.all_gather_vec(local.as_slice().to_vec(), "all_gather")?
            .into_iter()
            .map(|v| State::from_vec(dims, v))
            .collect()
    }

    /// Elementwise sum over ranks: ring reduce-scatter then ring all-gather.
    pub fn all_reduce(&mut self, local: &State<T>) -> Result<State<T>> {
        const PRIM: &str = "all_reduce";
        let (p, r) = (self.ranks(), self.index());
        let mut acc = local.as_slice().to_vec();
        let segs = segments(acc.len(), p);
        let (next, prev) = ((r + 1) % p, (r + p - 1) % p);
        for s in 0..p.saturating_sub(1) {
            let out = segs[(r + p - s) % p].clone();
            let inc = segs[(r + 2 * p - s - 1) % p].clone();
            self.send_tagged(next, acc[out].to_vec(), PRIM)?;
            let got = self.recv_tagged(prev, PRIM)?;
            expect_len(&got, inc.len(), prev, PRIM)?;
            for (a, g) in acc[inc].iter_mut().zip(got) {
                *a = *a + g;
            }
        }
        // Rank r now owns the reduced segment r+1.
        for s in 0..p.saturating_sub(1) {
            let out = segs[(r + 1 + p - s) % p].clone();
            let inc = segs[(r + p - s) % p].clone();
            self.send_tagged(next, acc[out].to_vec(), PRIM)?;
            let got = self.recv_tagged(prev, PRIM)?;
            expect_len(&got, inc.len(), prev, PRIM)?;
            acc[inc].copy_from_slice(&got);
        }
        State::from_vec(local.dims(), acc)
    }

    /// Pipelined decayed prefix scan along the rank chain.
    ///
    /// Returns `(recv, scanned)` where `recv` is the exclusive scan from the
    /// upstream ranks (zero at the head of the chain) and
    /// `scanned = exp(decay) ⊙ recv + local`. The state is cut into `K`
    /// key-dimension blocks spanning all heads; each block is received,
    /// updated and forwarded before the next one is touched.
    pub fn all_scan(
        &mut self,
        local: &State<T>,
        decay: &CumDecay<T>,
        pipe: PipelineConfig,
        dir: Direction,
    ) -> Result<(State<T>, State<T>)> {
        let dims = local.dims();
        pipe.check(dims.key_dim)?;
        decay.check_dims(dims)?;
        let (p, r) = (self.ranks(), self.index());
        let (upstream, downstream) = match dir {
            Direction::Fwd => (r.checked_sub(1), (r + 1 < p).then_some(r + 1)),
            Direction::Bwd => ((r + 1 < p).then_some(r + 1), r.checked_sub(1)),
        };
        let prim = dir.primitive();
        let (h, ek, ev) = (dims.heads, dims.key_dim, dims.value_dim);
        let kb = ek / pipe.num_blocks();
        let block_len = h * kb * ev;
        let src = local.as_slice();
        let logd = decay.log_values().data();
        let mut recv = State::zeros(dims);
        let mut scanned = local.clone();
        let update_cost = self.net().block_update_cost;

        for b in 0..pipe.num_blocks() {
            let rows: Vec<usize> = (0..h).flat_map(|hh| (hh * ek + b * kb)..(hh * ek + (b + 1) * kb)).collect();
            let mut block: Vec<T> =
                rows.iter().flat_map(|&row| src[row * ev..(row + 1) * ev].iter().copied()).collect();
            if let Some(up) = upstream {
                let incoming = self.recv_tagged(up, prim)?;
                expect_len(&incoming, block_len, up, prim)?;
                let block_decay: Vec<T> = rows.iter().map(|&row| logd[row]).collect();
                decayed_add_rows(&mut block, &block_decay, &incoming, ev);
                self.charge_comm("all_scan_update", update_cost);
                let dst = recv.as_mut_slice();
                for (i, &row) in rows.iter().enumerate() {
                    dst[row * ev..(row + 1) * ev].copy_from_slice(&incoming[i * ev..(i + 1) * ev]);
                }
            }
            let dst = scanned.as_mut_slice();
            for (i, &row) in rows.iter().enumerate() {
                dst[row * ev..(row + 1) * ev].copy_from_slice(&block[i * ev..(i + 1) * ev]);
            }
            if let Some(down) = downstream {
                self.send_tagged(down, block, prim)?;
            }
        }
        Ok((recv, scanned))
    }
}
