//! `<problem_id>.tree.jsonl`: one header line, then one node per line in id order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use steptree_core::mcts::{MctsConfig, RunReport, RunStatus};
use steptree_core::types::{SearchNode, SearchTree, SCHEMA_VERSION};

use crate::files::{self, FileError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeHeader {
    pub schema_version: u32,
    pub tree_id: String,
    pub problem_id: String,
    pub status: RunStatus,
    pub seed: u64,
    pub config: MctsConfig,
    pub report: RunReport,
    pub node_count: usize,
}

pub fn encode(tree: &SearchTree, header: &TreeHeader) -> Result<Vec<u8>, serde_json::Error> {
    let mut out = serde_json::to_vec(header)?;
    out.push(b'\n');
    out.extend(files::to_jsonl(tree.nodes())?);
    Ok(out)
}

pub fn write(path: &Path, tree: &SearchTree, header: &TreeHeader) -> Result<(), FileError> {
    let bytes = encode(tree, header).map_err(|e| FileError::Encode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    files::write_atomic(path, &bytes)
}

/// Load and structurally validate a tree file.
pub fn read(path: &Path) -> Result<(TreeHeader, SearchTree), FileError> {
    let text = std::fs::read_to_string(path).map_err(|e| FileError::io(path, e))?;
    let parse_err = |line: usize, offset: usize, message: String| FileError::Parse {
        path: path.to_path_buf(),
        line,
        offset: offset as u64,
        message,
    };
    let mut offset = 0usize;
    let mut header: Option<TreeHeader> = None;
    let mut nodes: Vec<SearchNode> = Vec::new();
    for (i, raw) in text.split_inclusive('\n').enumerate() {
        let line = raw.trim_end();
        if !line.is_empty() {
            if header.is_none() {
                let h: TreeHeader =
                    serde_json::from_str(line).map_err(|e| parse_err(i + 1, offset, e.to_string()))?;
                if h.schema_version != SCHEMA_VERSION {
                    return Err(parse_err(
                        i + 1,
                        offset,
                        format!("unsupported schema_version {}", h.schema_version),
                    ));
                }
                header = Some(h);
            } else {
                nodes.push(
                    serde_json::from_str(line).map_err(|e| parse_err(i + 1, offset, e.to_string()))?,
                );
            }
        }
        offset += raw.len();
    }
    let header = header.ok_or_else(|| parse_err(1, 0, "missing header line".into()))?;
    if header.node_count != nodes.len() {
        return Err(parse_err(
            1,
            0,
            format!("header declares {} nodes, file has {}", header.node_count, nodes.len()),
        ));
    }
    let tree = SearchTree::from_nodes(header.tree_id.clone(), header.problem_id.clone(), nodes)
        .map_err(|e| parse_err(1, 0, e.to_string()))?;
    Ok((header, tree))
}

#[cfg(test)]
mod tests {
    use super::*;
    use steptree_core::answer::AnswerSpec;
    use steptree_core::types::Trajectory;

    fn sample() -> (TreeHeader, SearchTree) {
        let mut t = SearchTree::new("tid", Trajectory::root("p1"));
        let s = Trajectory::root("p1")
            .extended("go", "1 + 1 = 2", AnswerSpec::TheAnswerIs)
            .unwrap();
        t.add_child(0, s, "go".into());
        let h = TreeHeader {
            schema_version: SCHEMA_VERSION,
            tree_id: "tid".into(),
            problem_id: "p1".into(),
            status: RunStatus::Completed,
            seed: 3,
            config: MctsConfig::default(),
            report: RunReport::default(),
            node_count: 2,
        };
        (h, t)
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p1.tree.jsonl");
        let (h, t) = sample();
        write(&p, &t, &h).unwrap();
        let (h2, t2) = read(&p).unwrap();
        assert_eq!((h, t), (h2, t2));
    }

    #[test]
    fn truncated_node_line_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.tree.jsonl");
        let (h, t) = sample();
        let bytes = encode(&t, &h).unwrap();
        let first_nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let mut cut = bytes[..first_nl + 20].to_vec();
        cut.push(b'\n');
        std::fs::write(&p, cut).unwrap();
        match read(&p) {
            Err(FileError::Parse { line, offset, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(offset, first_nl as u64 + 1);
            }
            other => panic!("{other:?}"),
        }
    }
}
