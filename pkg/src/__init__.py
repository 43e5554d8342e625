# Cascade streaming semi-supervised ASR source code 
