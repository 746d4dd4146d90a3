//! Git-style content hashing of run inputs.

use sha2::{Digest, Sha256};

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// `sha256("blob <len>\0" ++ bytes)`, as git computes object ids.
pub fn blob_id(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()));
    h.update(bytes);
    hex(&h.finalize())
}

/// Hash of a list of `(name, blob id)` entries, sorted by name.
pub fn tree_id(entries: &mut [(String, String)]) -> String {
    entries.sort();
    let mut h = Sha256::new();
    for (name, id) in entries.iter() {
        h.update(format!("{id} {name}\n"));
    }
    hex(&h.finalize())
}
