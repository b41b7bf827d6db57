use bitvec::prelude::*;
use rand::Rng;

use crate::scheme::QuerySet;

/// The server's messages for the current step.
#[derive(Debug, Clone)]
pub struct ServerState {
    msg_bits: usize,
    messages: Vec<BitVec<u64, Lsb0>>,
}

impl ServerState {
    pub fn new(n: usize, msg_bits: usize) -> Self {
        Self { msg_bits, messages: vec![bitvec![u64, Lsb0; 0; msg_bits]; n] }
    }

    pub fn msg_bits(&self) -> usize {
        self.msg_bits
    }

    /// Draws a fresh uniform message for every source.
    pub fn refresh<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let words = self.msg_bits.div_ceil(64);
        for m in &mut self.messages {
            let mut fresh: BitVec<u64, Lsb0> = BitVec::from_vec((0..words).map(|_| rng.gen()).collect());
            fresh.truncate(self.msg_bits);
            *m = fresh;
        }
    }

    pub fn message(&self, i: usize) -> &BitSlice<u64, Lsb0> {
        &self.messages[i]
    }

    /// Concatenation of the requested messages in increasing source order.
    pub fn answer(&self, q: QuerySet) -> BitVec<u64, Lsb0> {
        let mut out = BitVec::with_capacity(q.len() * self.msg_bits);
        for i in q.members().take_while(|&i| i < self.messages.len()) {
            out.extend_from_bitslice(&self.messages[i]);
        }
        out
    }
}

/// Cuts message `x` out of the answer to `q`, if it is there.
pub fn decode(answer: &BitSlice<u64, Lsb0>, q: QuerySet, x: usize, msg_bits: usize) -> Option<&BitSlice<u64, Lsb0>> {
    let start = q.rank_of(x)? * msg_bits;
    answer.get(start..start + msg_bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn answer_is_concatenation() {
        let mut s = ServerState::new(4, 70);
        s.refresh(&mut ChaCha8Rng::seed_from_u64(1));
        let q = QuerySet::from_members([1, 3]);
        let a = s.answer(q);
        assert_eq!(a.len(), 140);
        assert_eq!(decode(&a, q, 1, 70).unwrap(), s.message(1));
        assert_eq!(decode(&a, q, 3, 70).unwrap(), s.message(3));
        assert!(decode(&a, q, 2, 70).is_none());
    }

    #[test]
    fn refresh_changes_messages() {
        let mut s = ServerState::new(2, 64);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        s.refresh(&mut rng);
        let before = s.message(0).to_bitvec();
        s.refresh(&mut rng);
        assert_ne!(before, s.message(0));
        assert_eq!(s.message(1).len(), 64);
    }
}
