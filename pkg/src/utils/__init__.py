# Utils module for Cascade 
