//! Prompt templates. The files under `templates/<version>/` are the source of
//! truth; placeholders are written `{name}`.

pub const TEMPLATE_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Templates {
    pub system: &'static str,
    pub describe: &'static str,
    pub objects: &'static str,
    pub steps: &'static str,
    pub revise: &'static str,
    pub meta_actions: &'static str,
    pub meta_action_definition: &'static str,
    pub repair: &'static str,
    pub select_demo: &'static str,
    pub select_candidate: &'static str,
    pub pose_hint: &'static str,
    pub score_similarity: &'static str,
}

pub const V1: Templates = Templates {
    system: include_str!("../../templates/v1/system.txt"),
    describe: include_str!("../../templates/v1/stage1_describe.txt"),
    objects: include_str!("../../templates/v1/stage2_objects.txt"),
    steps: include_str!("../../templates/v1/stage3_steps.txt"),
    revise: include_str!("../../templates/v1/stage4_revise.txt"),
    meta_actions: include_str!("../../templates/v1/stage5_meta.txt"),
    meta_action_definition: include_str!("../../templates/v1/meta_action_definition.txt"),
    repair: include_str!("../../templates/v1/repair.txt"),
    select_demo: include_str!("../../templates/v1/select_demo.txt"),
    select_candidate: include_str!("../../templates/v1/select_candidate.txt"),
    pose_hint: include_str!("../../templates/v1/pose_hint.txt"),
    score_similarity: include_str!("../../templates/v1/score_similarity.txt"),
};

impl Default for Templates {
    fn default() -> Self {
        V1
    }
}

/// Substitute `{name}` placeholders. Unknown placeholders are left as-is.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name_end = after.find('}');
        match name_end.and_then(|end| {
            let name = &after[..end];
            vars.iter().find(|(k, _)| *k == name).map(|(_, v)| (end, *v))
        }) {
            Some((end, value)) => {
                out.push_str(value);
                rest = &after[end + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
