pub mod corpus;
pub mod evalptime;
pub mod formula;
pub mod hiercov;
pub mod invclass;
pub mod par;
pub mod pstruct;
pub mod qcore;
