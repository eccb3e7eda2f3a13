use serde::{Deserialize, Serialize};

/// Token layout: fixed template symbols, then attributes, then entities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub n_attributes: usize,
    pub n_entities: usize,
}

impl Vocab {
    pub const OF: usize = 0;
    pub const QUERY: usize = 1;
    pub const ARROW: usize = 2;
    /// `(A)` … `(D)` occupy `LABEL_BASE..LABEL_BASE + 4`.
    pub const LABEL_BASE: usize = 3;
    pub const N_SPECIAL: usize = 7;

    pub fn new(n_attributes: usize, n_entities: usize) -> Self {
        Self {
            n_attributes,
            n_entities,
        }
    }

    pub fn size(&self) -> usize {
        Self::N_SPECIAL + self.n_attributes + self.n_entities
    }

    pub fn attribute(&self, a: usize) -> usize {
        debug_assert!(a < self.n_attributes);
        Self::N_SPECIAL + a
    }

    pub fn entity(&self, e: usize) -> usize {
        debug_assert!(e < self.n_entities);
        Self::N_SPECIAL + self.n_attributes + e
    }

    /// Entity number of a token, if it is an entity token.
    pub fn entity_of(&self, token: usize) -> Option<usize> {
        let base = Self::N_SPECIAL + self.n_attributes;
        (base..base + self.n_entities).contains(&token).then(|| token - base)
    }

    pub fn label(&self, slot: usize) -> usize {
        Self::LABEL_BASE + slot
    }

    pub fn name(&self, token: usize) -> String {
        match token {
            Self::OF => "of".into(),
            Self::QUERY => "?".into(),
            Self::ARROW => "->".into(),
            t if t < Self::N_SPECIAL => format!("({})", char::from(b'A' + (t - Self::LABEL_BASE) as u8)),
            t if t < Self::N_SPECIAL + self.n_attributes => format!("attr{}", t - Self::N_SPECIAL),
            t => match self.entity_of(t) {
                Some(e) => format!("ent{e}"),
                None => format!("<{t}>"),
            },
        }
    }
}
